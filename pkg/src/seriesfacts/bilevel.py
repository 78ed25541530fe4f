"""Stochastic bilevel FACTS placement solved by column-and-constraint generation.

Upper level: choose VSR/PST placements ``x`` (binary) to minimise annualised
investment plus the weighted cost of wind spillage and load shedding.  Lower
level, per scenario ``t``: market clearing

    min w_t.y  s.t.  E y = h_t,  P y + Q z <= r_t - K x,  z binary

where ``z`` holds the VSR flow-direction binaries.  The master problem keeps a
copy ``(y~, z~)`` of every lower level and, for each direction pattern
``z^(l)`` seen so far, a primal-dual value cut

    w_t.y~ <= (Q z^(l) - r_t).lam - h_t.mu + x'K'lam,
    P'lam + E'mu + w_t = 0,  lam >= 0,

with ``x_j * lam_i`` replaced by ``omega_ij`` (exact for binary ``x`` as long
as ``lam_i`` stays below the dual big-M).  Two subproblems evaluate a master
solution: SP1 gives the lower-level optimum, SP2 picks the optimum that is
best for the upper level (optimistic bilevel).
"""
from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .devices import DeviceCatalog
from .market import (DEFAULT_BETA, SHIFT_FACTOR, MarketModel, _norm_formulation, alpha,
                     build_lower_level, delta, dp, flow, psp, pw)
from .milp_core import (BINARY, INF, STATUS_TIME_LIMIT,
                        Model, SolveResult, SolverError, SolverOptions)
from .network import NetworkCase, PtdfMatrix, compute_ptdf
from .scenarios import ScenarioData

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 50.0
DEFAULT_M_LAMBDA = 1e5
BRUTE_FORCE_CAP = 12
MIN_EPSILON = 1e-6


class BilevelError(ValueError):
    pass


# -- compact form ----------------------------------------------------------------

@dataclass
class ScenarioBlock:
    index: int
    scenario: ScenarioData
    y_names: list[str]
    z_names: list[str]
    E: sp.csr_matrix
    h: np.ndarray
    P: sp.csr_matrix
    Q: sp.csr_matrix
    K: sp.csr_matrix
    r: np.ndarray
    w: np.ndarray
    g: np.ndarray
    eq_names: list[str]
    ineq_names: list[str]

    @property
    def hours(self) -> float:
        return self.scenario.hours

    @property
    def y_index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.y_names)}

    def k_rows(self) -> np.ndarray:
        return np.unique(self.K.tocoo().row)


@dataclass
class CompactForm:
    case: NetworkCase
    catalog: DeviceCatalog
    x_names: list[str]
    f: np.ndarray
    A: np.ndarray
    b: np.ndarray
    blocks: list[ScenarioBlock]
    alpha_spill: float
    beta: float
    formulation: str
    directions: dict[str, str]
    monitored: tuple[str, ...]

    @property
    def n_x(self) -> int:
        return len(self.x_names)

    def x_vector(self, plan: Mapping[str, float]) -> np.ndarray:
        return np.array([float(plan.get(n, 0.0)) for n in self.x_names])

    def feasible_x(self, x: np.ndarray) -> bool:
        return bool(np.all(self.A @ x <= self.b + 1e-9)) if len(self.b) else True

    def enumerate_x(self):
        for bits in itertools.product((0.0, 1.0), repeat=self.n_x):
            x = np.array(bits)
            if self.feasible_x(x):
                yield x

    def x_space_singleton(self) -> bool:
        """True when the budgets leave exactly one admissible plan (all off)."""
        for j in range(self.n_x):
            e = np.zeros(self.n_x)
            e[j] = 1.0
            if self.feasible_x(e):
                return False
        return True


def upper_level_rows(catalog: DeviceCatalog, n_vsr: int, n_pst: int):
    x_names = [delta(c.branch) for c in catalog.vsr] + [alpha(c.branch) for c in catalog.pst]
    f = np.array([c.annual_cost for c in catalog.vsr] + [c.annual_cost for c in catalog.pst])
    pos = {n: i for i, n in enumerate(x_names)}
    rows, rhs = [], []
    if catalog.vsr:
        r = np.zeros(len(x_names))
        r[[pos[delta(c.branch)] for c in catalog.vsr]] = 1.0
        rows.append(r)
        rhs.append(n_vsr)
    if catalog.pst:
        r = np.zeros(len(x_names))
        r[[pos[alpha(c.branch)] for c in catalog.pst]] = 1.0
        rows.append(r)
        rhs.append(n_pst)
    for kid in catalog.shared:
        r = np.zeros(len(x_names))
        r[pos[delta(kid)]] = r[pos[alpha(kid)]] = 1.0
        rows.append(r)
        rhs.append(1.0)
    A = np.array(rows) if rows else np.zeros((0, len(x_names)))
    return x_names, f, A, np.array(rhs, dtype=float)


def _block_from_market(t: int, mm: MarketModel, x_names: Sequence[str], case: NetworkCase,
                       alpha_spill: float, beta: float) -> ScenarioBlock:
    m = mm.model
    c, A_ub, b_ub, A_eq, b_eq, lb, ub, integ, ineq, eq = m.matrices()
    names = m.var_names
    xset = set(x_names)
    x_cols = [m.var(n) for n in x_names]
    z_cols = [j for j, n in enumerate(names) if integ[j] and n not in xset]
    y_cols = [j for j, n in enumerate(names) if not integ[j]]
    if np.any(np.isfinite(lb[y_cols])) or np.any(np.isfinite(ub[y_cols])):
        raise BilevelError("lower-level continuous variables must be free (bounds as rows)")
    A_eq = A_eq.tocsc()
    A_ub = A_ub.tocsc()
    if A_eq[:, x_cols + z_cols].nnz:
        raise BilevelError("equality rows may not contain upper-level or binary variables")
    if np.any(c[x_cols + z_cols]):
        raise BilevelError("lower-level objective may not price x or z")
    y_names = [names[j] for j in y_cols]
    g = np.zeros(len(y_cols))
    yi = {n: i for i, n in enumerate(y_names)}
    for wf in case.wind_farms:
        g[yi[psp(wf.id)]] = alpha_spill
    for d in case.loads:
        g[yi[dp(d.id)]] = beta
    return ScenarioBlock(
        index=t, scenario=mm.scenario, y_names=y_names, z_names=[names[j] for j in z_cols],
        E=A_eq[:, y_cols].tocsr(), h=b_eq, P=A_ub[:, y_cols].tocsr(),
        Q=A_ub[:, z_cols].tocsr(), K=A_ub[:, x_cols].tocsr(), r=b_ub,
        w=c[y_cols], g=g, eq_names=eq, ineq_names=ineq)


def monitored_ptdf(case: NetworkCase, catalog: DeviceCatalog,
                   monitored: Sequence[str] | None) -> PtdfMatrix:
    """PTDF rows for monitored lines plus every candidate, in case order."""
    if monitored is None:
        keep = {k.id for k in case.branches}
    else:
        keep = {str(k) for k in monitored} | set(catalog.candidate_ids)
    return compute_ptdf(case, [k.id for k in case.branches if k.id in keep])


def assemble_compact(case: NetworkCase, scenarios: Sequence[ScenarioData], catalog: DeviceCatalog,
                     n_vsr: int, n_pst: int, H: PtdfMatrix | None = None,
                     directions: Mapping[str, str] | None = None,
                     monitored: Sequence[str] | None = None,
                     formulation: str = SHIFT_FACTOR, alpha_spill: float = DEFAULT_ALPHA,
                     beta: float = DEFAULT_BETA) -> CompactForm:
    """Stack every scenario's lower level into matrix form.

    ``monitored`` (default: all branches) selects the limited lines; in the
    shift-factor form it also selects the PTDF rows.  Direction verdicts
    remove the corresponding binaries from ``Q``.
    """
    f_ = _norm_formulation(formulation)
    directions = dict(directions or {})
    if f_ == SHIFT_FACTOR and H is None:
        H = monitored_ptdf(case, catalog, monitored)
    x_names, f, A, b = upper_level_rows(catalog, n_vsr, n_pst)
    blocks = []
    for t, scen in enumerate(scenarios):
        mm = build_lower_level(case, scen, catalog, H=H, x=None, directions=directions,
                               formulation=f_, monitored=monitored, beta=beta)
        if list(mm.x_vars) != x_names:
            raise BilevelError(f"index-map mismatch for scenario {scen.id}: "
                               f"{list(mm.x_vars)} vs {x_names}")
        blocks.append(_block_from_market(t, mm, x_names, case, alpha_spill, beta))
    mon = H.branch_ids if f_ == SHIFT_FACTOR else tuple(
        str(k) for k in (monitored if monitored is not None else [k.id for k in case.branches]))
    return CompactForm(case, catalog, x_names, f, A, b, blocks, alpha_spill, beta, f_,
                       directions, tuple(mon))


# -- subproblems ---------------------------------------------------------------------

def _ll_model(blk: ScenarioBlock, x: np.ndarray, z: np.ndarray | None = None,
              name: str = "ll") -> Model:
    m = Model(f"{name}_s{blk.scenario.id}")
    ycols = m.add_variables(blk.y_names, -INF, INF)
    rhs = blk.r - blk.K @ x
    if z is None and blk.z_names:
        zcols = m.add_variables(blk.z_names, 0, 1, BINARY)
        mat = sp.hstack([blk.P, blk.Q]).tocsr()
        cols = np.r_[ycols, zcols]
    else:
        if blk.z_names:
            rhs = rhs - blk.Q @ z
        mat, cols = blk.P, ycols
    m.add_rows(blk.eq_names, blk.E, ycols, "==", blk.h)
    m.add_rows(blk.ineq_names, mat, cols, "<=", rhs)
    return m


def _objective(m: Model, names: Sequence[str], coef: np.ndarray) -> None:
    m.set_objective({n: float(c) for n, c in zip(names, coef) if c})


@dataclass
class LowerLevelSolution:
    scenario_id: int
    phi: float  # lower-level optimum w.y
    upper_cost: float  # g.y, unweighted
    y: np.ndarray
    z: np.ndarray


def _polish(blk: ScenarioBlock, x: np.ndarray, z: np.ndarray, coef: np.ndarray,
            cap: float | None = None) -> SolveResult:
    """Re-solve at rounded binaries so big-M rows hold exactly (no integrality leakage)."""
    m = _ll_model(blk, x, z, name="polish")
    if cap is not None:
        m.add_constraint("eq18b", {n: float(c) for n, c in zip(blk.y_names, blk.w) if c},
                         "<=", cap)
    _objective(m, blk.y_names, coef)
    return m.solve()


def _split_values(blk: ScenarioBlock, res: SolveResult) -> tuple[np.ndarray, np.ndarray]:
    nv = len(blk.y_names)
    return res.values[:nv], np.round(res.values[nv:nv + len(blk.z_names)])


def solve_sp1(compact: CompactForm, t: int, x: np.ndarray,
              options: SolverOptions | None = None, return_z: bool = False):
    """Lower-level optimum at fixed ``x``; with ``return_z`` also the optimal binaries."""
    blk = compact.blocks[t]
    m = _ll_model(blk, x, name="sp1")
    _objective(m, blk.y_names, blk.w)
    res = m.solve(options or SolverOptions(mip_gap=1e-9))
    if not res.optimal:
        raise SolverError(f"SP1 scenario {blk.scenario.id}: status {res.status}")
    _, z = _split_values(blk, res)
    if blk.z_names:
        res = _polish(blk, x, z, blk.w)
        if not res.optimal:
            raise SolverError(f"SP1 scenario {blk.scenario.id}: LP at rounded binaries "
                              f"ended with status {res.status}")
    phi = float(res.objective)
    return (phi, z) if return_z else phi


def solve_sp2(compact: CompactForm, t: int, x: np.ndarray, phi: float,
              options: SolverOptions | None = None,
              z_fallback: np.ndarray | None = None) -> LowerLevelSolution:
    """Among lower-level optima at ``x`` pick the one cheapest for the upper level."""
    blk = compact.blocks[t]
    options = options or SolverOptions(mip_gap=1e-9)
    # HiGHS presolve occasionally reports the capped MILP infeasible; retry without it
    attempts = [(1e-9, options),
                (1e-9, replace(options, presolve=False)),
                (1e-7, replace(options, presolve=False))]
    res, z = None, np.zeros(0)
    for slack, opts in attempts:
        cap = phi + slack * max(1.0, abs(phi))
        m = _ll_model(blk, x, name="sp2")
        m.add_constraint("eq18b", {n: float(c) for n, c in zip(blk.y_names, blk.w) if c},
                         "<=", cap)
        _objective(m, blk.y_names, blk.g)
        res = m.solve(opts)
        if res.optimal and blk.z_names:
            _, z = _split_values(blk, res)
            polished = _polish(blk, x, z, blk.g, cap)
            if not polished.optimal and z_fallback is not None:
                z = z_fallback
                polished = _polish(blk, x, z, blk.g, cap)
            res = polished
        if res.optimal:
            break
        logger.warning("SP2 scenario %s infeasible at phi=%.10g (slack %g, presolve %s), "
                       "retrying", blk.scenario.id, phi, slack, opts.presolve)
    if not res.optimal and z_fallback is not None:
        # the SP1 binaries always reach phi
        z = z_fallback
        res = _polish(blk, x, z, blk.g, phi + 1e-7 * max(1.0, abs(phi)))
    if not res.optimal:
        raise SolverError(f"SP2 scenario {blk.scenario.id}: status {res.status}")
    y = res.values[:len(blk.y_names)]
    z = z if blk.z_names else np.zeros(0)
    return LowerLevelSolution(blk.scenario.id, float(blk.w @ y), float(blk.g @ y), y, z)


def _pmap(fn, items, workers: int):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


@dataclass
class PlanEvaluation:
    x: np.ndarray
    objective: float
    investment: float
    solutions: list[LowerLevelSolution]


def evaluate_plan(compact: CompactForm, x: np.ndarray, workers: int = 1,
                  options: SolverOptions | None = None) -> PlanEvaluation:
    """Exact upper-level cost of plan ``x`` (SP1 then SP2 for every scenario)."""
    x = np.asarray(x, dtype=float)

    def one(t):
        phi, z = solve_sp1(compact, t, x, options, return_z=True)
        return solve_sp2(compact, t, x, phi, options, z_fallback=z)

    sols = _pmap(one, range(len(compact.blocks)), workers)
    inv = float(compact.f @ x)
    total = inv + sum(blk.hours * s.upper_cost for blk, s in zip(compact.blocks, sols))
    return PlanEvaluation(x, total, inv, sols)


# -- master problem ------------------------------------------------------------------

@dataclass
class CutBlock:
    iteration: int
    t: int
    z: np.ndarray
    lam: list[str]
    mu: list[str]
    value_row: str
    omega: list[tuple[int, int, str]]


@dataclass
class IterationRecord:
    q: int
    lb: float
    ub: float
    gap: float
    mp_seconds: float
    sp_seconds: float
    mp_objective: float
    x: tuple[float, ...]
    cuts_added: int = 0


@dataclass
class CcgState:
    q: int = 0
    lb: float = -math.inf
    ub: float = math.inf
    incumbent: np.ndarray | None = None
    incumbent_eval: PlanEvaluation | None = None
    cuts: list[CutBlock] = field(default_factory=list)
    log: list[IterationRecord] = field(default_factory=list)
    status: str = "running"
    warnings: list[str] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return relative_gap(self.lb, self.ub)


def relative_gap(lb: float, ub: float) -> float:
    if not math.isfinite(ub) or not math.isfinite(lb):
        return math.inf
    if abs(ub - lb) <= 1e-9 * max(1.0, abs(ub)):
        return 0.0
    return abs((ub - lb) / ub) if ub != 0 else math.inf


class MasterProblem:
    """The CCG master problem, grown in place as cut blocks are added."""

    def __init__(self, compact: CompactForm, m_lambda: float = DEFAULT_M_LAMBDA):
        self.compact = compact
        self.m_lambda = m_lambda
        self.model = Model("master")
        m = self.model
        self.x_cols = m.add_variables(compact.x_names, 0, 1, BINARY, obj=compact.f)
        if len(compact.b):
            m.add_rows([f"eq12bcd_{i}" for i in range(len(compact.b))], compact.A, self.x_cols,
                       "<=", compact.b)
        self.y_cols, self.z_cols = [], []
        for blk in compact.blocks:
            t = blk.index
            yc = m.add_variables([f"t{t}_{n}" for n in blk.y_names], -INF, INF,
                                 obj=blk.hours * blk.g)
            zc = m.add_variables([f"t{t}_{n}" for n in blk.z_names], 0, 1, BINARY)
            m.add_rows([f"t{t}_{n}" for n in blk.eq_names], blk.E, yc, "==", blk.h)
            m.add_rows([f"t{t}_{n}" for n in blk.ineq_names],
                       sp.hstack([blk.P, blk.Q, blk.K]).tocsr(), np.r_[yc, zc, self.x_cols],
                       "<=", blk.r)
            self.y_cols.append(yc)
            self.z_cols.append(zc)

    def add_cut(self, q: int, t: int, z: np.ndarray) -> CutBlock:
        blk = self.compact.blocks[t]
        m, M = self.model, self.m_lambda
        tag = f"c{q}t{t}"
        n_in, n_eq = blk.P.shape[0], blk.E.shape[0]
        lam_names = [f"lam_{tag}_{i}" for i in range(n_in)]
        mu_names = [f"mu_{tag}_{j}" for j in range(n_eq)]
        lam = m.add_variables(lam_names, 0.0, INF)
        mu = m.add_variables(mu_names, -INF, INF)
        # stationarity  P'lam + E'mu = -w
        stat = sp.hstack([blk.P.T, blk.E.T]).tocsr()
        m.add_rows([f"stat_{tag}_{i}" for i in range(len(blk.y_names))], stat, np.r_[lam, mu],
                   "==", -blk.w)
        # omega_ij = x_j * lam_i over the nonzeros of K
        Kc = blk.K.tocoo()
        omega = []
        coeffs: dict[int, float] = {}
        for i, j, kij in zip(Kc.row, Kc.col, Kc.data):
            name = f"om_{tag}_{i}_{j}"
            oc = m.add_variable(name, 0.0, INF)
            xj = self.compact.x_names[j]
            lj = lam_names[i]
            m.add_constraint(f"omx_{tag}_{i}_{j}", [(name, 1.0), (xj, -M)], "<=", 0.0)
            m.add_constraint(f"oml_{tag}_{i}_{j}", [(name, 1.0), (lj, -1.0)], "<=", 0.0)
            m.add_constraint(f"omlx_{tag}_{i}_{j}", [(lj, 1.0), (name, -1.0), (xj, M)], "<=", M)
            coeffs[oc] = coeffs.get(oc, 0.0) - kij
            omega.append((int(i), int(j), name))
        # value row  w.y~ - (Qz - r).lam + h.mu - sum K_ij omega_ij <= 0
        qz = blk.Q @ z if blk.z_names else np.zeros(n_in)
        for yc, wv in zip(self.y_cols[t], blk.w):
            if wv:
                coeffs[int(yc)] = coeffs.get(int(yc), 0.0) + wv
        for lc, val in zip(lam, blk.r - qz):
            if val:
                coeffs[int(lc)] = coeffs.get(int(lc), 0.0) + val
        for mc, val in zip(mu, blk.h):
            if val:
                coeffs[int(mc)] = coeffs.get(int(mc), 0.0) + val
        cols = np.fromiter(coeffs.keys(), dtype=int)
        vals = np.fromiter(coeffs.values(), dtype=float)
        row = f"cut_{tag}"
        m.add_rows([row], sp.csr_matrix(vals[None, :]), cols, "<=", [0.0])
        return CutBlock(q, t, np.asarray(z, dtype=float), lam_names, mu_names, row, omega)

    def solve(self, options: SolverOptions) -> tuple[SolveResult, float]:
        res = self.model.solve(options)
        if res.values is None:
            raise SolverError(f"master problem: status {res.status} ({res.message})")
        # the best bound, not the incumbent, is a valid lower bound
        bound = res.dual_bound if res.dual_bound is not None else -INF
        return res, min(bound, res.objective)

    def x_value(self, res: SolveResult) -> np.ndarray:
        return np.round(res.values[self.x_cols])


def solve_master(master: MasterProblem, options: SolverOptions | None = None):
    """Solve the master problem: ``(x*, lower bound, solve result)``."""
    res, bound = master.solve(options or SolverOptions())
    return master.x_value(res), bound, res


def generate_cut(master: MasterProblem, q: int,
                 solutions: Sequence[LowerLevelSolution]) -> list[CutBlock]:
    """One primal-dual cut block per scenario for the direction patterns in ``solutions``."""
    return [master.add_cut(q, t, sol.z) for t, sol in enumerate(solutions)]


# -- the loop --------------------------------------------------------------------

@dataclass
class CcgConfig:
    epsilon: float = 1e-3
    max_iter: int = 20
    mp_time_limit_s: float | None = 3 * 3600.0
    mip_gap: float = 1e-6
    m_lambda: float = DEFAULT_M_LAMBDA
    workers: int = 1

    def __post_init__(self):
        if not (self.epsilon >= MIN_EPSILON):
            raise BilevelError(f"epsilon must be >= {MIN_EPSILON}")
        if self.max_iter < 1:
            raise BilevelError("max_iter must be >= 1")


@dataclass
class CcgResult:
    state: CcgState
    evaluation: PlanEvaluation
    master: MasterProblem
    wall_time: float
    mp_time: float
    sp_time: float

    @property
    def x(self) -> np.ndarray:
        return self.evaluation.x

    @property
    def objective(self) -> float:
        return self.state.ub


def run_ccg(compact: CompactForm, config: CcgConfig | None = None) -> CcgResult:
    config = config or CcgConfig()
    t_start = time.perf_counter()
    state = CcgState()
    master = MasterProblem(compact, config.m_lambda)
    mp_opts = SolverOptions(mip_gap=config.mip_gap, time_limit_s=config.mp_time_limit_s)
    sp_opts = SolverOptions(mip_gap=1e-9)
    mp_total = sp_total = 0.0
    singleton = compact.x_space_singleton()
    while True:
        state.q += 1
        t0 = time.perf_counter()
        x, bound, res = solve_master(master, mp_opts)
        mp_sec = time.perf_counter() - t0
        mp_total += mp_sec
        if res.status == STATUS_TIME_LIMIT:
            state.warnings.append(f"master problem hit its time limit in iteration {state.q}")
        state.lb = max(state.lb, bound)

        t0 = time.perf_counter()
        ev = evaluate_plan(compact, x, config.workers, sp_opts)
        sp_sec = time.perf_counter() - t0
        sp_total += sp_sec
        if ev.objective < state.ub:
            state.ub = ev.objective
            state.incumbent = x
            state.incumbent_eval = ev
        if singleton:
            # the only admissible plan has just been evaluated exactly
            state.lb = state.ub
        rec = IterationRecord(state.q, state.lb, state.ub, state.gap, mp_sec, sp_sec,
                              float(res.objective), tuple(x))
        state.log.append(rec)
        logger.info("CCG q=%d LB=%.6g UB=%.6g gap=%.3g", state.q, state.lb, state.ub, state.gap)
        if state.gap <= config.epsilon:
            state.status = "converged"
            break
        if res.status == STATUS_TIME_LIMIT:
            state.status = "gap not closed"
            break
        if state.q >= config.max_iter:
            state.status = "gap not closed"
            state.warnings.append(f"max_iter reached with gap {state.gap:.4g}")
            break
        new = generate_cut(master, state.q, ev.solutions)
        state.cuts.extend(new)
        rec.cuts_added = len(new)
    return CcgResult(state, state.incumbent_eval, master, time.perf_counter() - t_start,
                     mp_total, sp_total)


# -- brute force ------------------------------------------------------------------

@dataclass
class BruteForceResult:
    evaluation: PlanEvaluation
    table: list[tuple[tuple[float, ...], float]]
    wall_time: float

    @property
    def x(self) -> np.ndarray:
        return self.evaluation.x

    @property
    def objective(self) -> float:
        return self.evaluation.objective


def brute_force_plan(compact: CompactForm, workers: int = 1) -> BruteForceResult:
    """Evaluate every admissible plan exactly and return the cheapest (first wins ties)."""
    if compact.n_x > BRUTE_FORCE_CAP:
        raise BilevelError(f"{compact.n_x} candidates exceed the brute-force cap of "
                           f"{BRUTE_FORCE_CAP}")
    t0 = time.perf_counter()
    best = None
    table = []
    for x in compact.enumerate_x():
        ev = evaluate_plan(compact, x, workers)
        table.append((tuple(x), ev.objective))
        if best is None or ev.objective < best.objective:
            best = ev
    return BruteForceResult(best, table, time.perf_counter() - t0)


# -- audits ------------------------------------------------------------------------

def _dual_value_bounded(blk: ScenarioBlock, x: np.ndarray, z: np.ndarray, m_lambda: float):
    """max (Qz - r + Kx).lam - h.mu over the dual polyhedron, lam capped on K rows."""
    m = Model("dual_audit")
    n_in, n_eq = blk.P.shape[0], blk.E.shape[0]
    ub = np.full(n_in, INF)
    ub[blk.k_rows()] = m_lambda
    lam = m.add_variables([f"l{i}" for i in range(n_in)], 0.0, ub)
    mu = m.add_variables([f"m{j}" for j in range(n_eq)], -INF, INF)
    m.add_rows([f"s{i}" for i in range(len(blk.y_names))],
               sp.hstack([blk.P.T, blk.E.T]).tocsr(), np.r_[lam, mu], "==", -blk.w)
    qz = blk.Q @ z if blk.z_names else np.zeros(n_in)
    coef = -(qz - blk.r + blk.K @ x)
    m.set_objective({**{f"l{i}": c for i, c in enumerate(coef) if c},
                     **{f"m{j}": c for j, c in enumerate(blk.h) if c}})
    res = m.solve()
    return -res.objective if res.optimal else -INF


def audit_plan(compact: CompactForm, result: CcgResult, tol: float = 1e-6) -> list[str]:
    """Big-M tightness audit of a finished CCG run.

    Checks that (a) capping the duals at the dual big-M does not lower any
    cut's value at the terminal plan, (b) every VSR set-point lies inside its
    susceptance range and (c) no ``v`` sits on its big-M bound.
    """
    warnings = []
    x = result.x
    for cut in result.state.cuts:
        blk = compact.blocks[cut.t]
        capped = _dual_value_bounded(blk, x, cut.z, result.master.m_lambda)
        free = _dual_value_bounded(blk, x, cut.z, INF)
        if capped < free - tol * max(1.0, abs(free)):
            warnings.append(f"dual bound active in cut (q={cut.iteration}, t={cut.t}) "
                            f"- increase M_lambda")
    warnings += audit_set_points(compact, result.evaluation, tol)
    return warnings


def audit_set_points(compact: CompactForm, ev: PlanEvaluation, tol: float = 1e-6) -> list[str]:
    warnings = []
    xi = dict(zip(compact.x_names, ev.x))
    for blk, sol in zip(compact.blocks, ev.solutions):
        yi = blk.y_index
        for c in compact.catalog.vsr:
            psi = sol.y[yi[f"psiV_{c.branch}"]]
            v = sol.y[yi[f"v_{c.branch}"]]
            pk = sol.y[yi[flow(c.branch)]]
            on = xi[delta(c.branch)] > 0.5
            if not on:
                if abs(psi) > tol or abs(v) > tol:
                    warnings.append(f"VSR {c.branch} off but psi={psi:.3g}, v={v:.3g} "
                                    f"(scenario {blk.scenario.id})")
                continue
            if abs(v) >= c.m2 * (1 - tol):
                warnings.append(f"|v| at its big-M bound on VSR {c.branch} "
                                f"(scenario {blk.scenario.id})")
            if abs(pk) > tol:
                db = psi / pk
                if db < c.db_min - tol or db > c.db_max + tol:
                    warnings.append(f"VSR {c.branch} effective db={db:.6g} outside "
                                    f"[{c.db_min:.6g}, {c.db_max:.6g}] (scenario {blk.scenario.id})")
            elif abs(psi) > tol:
                warnings.append(f"VSR {c.branch} injects {psi:.3g} MW at zero flow")
    return warnings


def audit_all_lines(compact: CompactForm, ev: PlanEvaluation, tol: float = 1e-6) -> list[dict]:
    """Re-simulate the planned dispatch with every line and report overloaded unmonitored lines."""
    case = compact.case
    H = compute_ptdf(case)
    mon = set(compact.monitored)
    out = []
    for blk, sol in zip(compact.blocks, ev.solutions):
        yi = blk.y_index
        inj = np.zeros(case.n_bus)
        scen = blk.scenario
        for g, i in zip(case.generators, case.gen_bus_idx()):
            inj[i] += sol.y[yi[f"pg_{g.id}"]]
        for w, i in zip(case.wind_farms, case.wind_bus_idx()):
            inj[i] += sol.y[yi[pw(w.id)]]
        for d, i, pd_ in zip(case.loads, case.load_bus_idx(), scen.load_mw):
            inj[i] -= pd_ - sol.y[yi[dp(d.id)]]
        psi = np.zeros(case.n_branch)
        for name, kind in (("psiV_", "vsr"), ("psiP_", "pst")):
            for kid in (compact.catalog.vsr_ids if kind == "vsr" else compact.catalog.pst_ids):
                k = case.branch_index[kid]
                val = sol.y[yi[name + kid]]
                inj[case.from_idx[k]] -= val
                inj[case.to_idx[k]] += val
                psi[k] += val
        flows = H.H @ inj + psi
        for k, br in enumerate(case.branches):
            if br.id in mon:
                continue
            if abs(flows[k]) > br.s_max * (1 + tol):
                out.append({"scenario": scen.id, "branch": br.id, "flow": float(flows[k]),
                            "s_max": br.s_max, "loading": float(abs(flows[k]) / br.s_max)})
    return out


# -- reporting --------------------------------------------------------------------

@dataclass
class PlanReport:
    vsr_locations: list[str]
    pst_locations: list[str]
    investment_vsr: float
    investment_pst: float
    curtailment_mwh: dict[str, float]
    shedding_mwh: float
    objective: float
    wind_penetration: float
    iterations: int
    status: str
    gap: float
    wall_time: float
    mp_time: float = 0.0
    sp_time: float = 0.0
    alpha_spill: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    scenario_curtailment: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    seed: int | None = None

    @property
    def investment(self) -> float:
        return self.investment_vsr + self.investment_pst

    def recomputed_objective(self) -> float:
        return (self.investment + self.alpha_spill * sum(self.curtailment_mwh.values())
                + self.beta * self.shedding_mwh)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["investment"] = self.investment
        return d


def _clean(v: float, tol: float = 1e-9) -> float:
    """Flush solver noise (including -0.0) to zero."""
    return 0.0 if abs(v) <= tol else float(v)


def build_report(compact: CompactForm, ev: PlanEvaluation, iterations: int = 0,
                 status: str = "evaluated", gap: float = 0.0, wall_time: float = 0.0,
                 mp_time: float = 0.0, sp_time: float = 0.0,
                 warnings: Sequence[str] = (), seed: int | None = None) -> PlanReport:
    case = compact.case
    xi = dict(zip(compact.x_names, ev.x))
    vsr = [c for c in compact.catalog.vsr if xi[delta(c.branch)] > 0.5]
    pst = [c for c in compact.catalog.pst if xi[alpha(c.branch)] > 0.5]
    curt = {w.id: 0.0 for w in case.wind_farms}
    shed = 0.0
    wind_e = load_e = 0.0
    per_scen = []
    for blk, sol in zip(compact.blocks, ev.solutions):
        yi = blk.y_index
        n = blk.hours
        row = {"scenario": blk.scenario.id, "hours": n}
        for w, avail in zip(case.wind_farms, blk.scenario.wind_mw):
            sp_mw = _clean(sol.y[yi[psp(w.id)]])
            curt[w.id] += n * sp_mw
            wind_e += n * sol.y[yi[pw(w.id)]]
            row[f"spill_{w.id}_mw"] = float(sp_mw)
            row[f"ratio_{w.id}"] = float(sp_mw / avail) if avail > 0 else 0.0
        s = _clean(sum(sol.y[yi[dp(d.id)]] for d in case.loads))
        shed += n * s
        row["shed_mw"] = float(s)
        load_e += n * float(np.sum(blk.scenario.load_mw))
        per_scen.append(row)
    return PlanReport(
        vsr_locations=[c.branch for c in vsr], pst_locations=[c.branch for c in pst],
        investment_vsr=float(sum(c.annual_cost for c in vsr)),
        investment_pst=float(sum(c.annual_cost for c in pst)),
        curtailment_mwh={k: float(v) for k, v in curt.items()}, shedding_mwh=float(shed),
        objective=float(ev.objective),
        wind_penetration=float(100.0 * wind_e / load_e) if load_e > 0 else 0.0,
        iterations=iterations, status=status, gap=float(gap), wall_time=wall_time,
        mp_time=mp_time, sp_time=sp_time, alpha_spill=compact.alpha_spill, beta=compact.beta,
        scenario_curtailment=per_scen, warnings=list(warnings), seed=seed)


def report_from_ccg(compact: CompactForm, result: CcgResult, audit: bool = True,
                    seed: int | None = None) -> PlanReport:
    warnings = list(result.state.warnings)
    if audit:
        warnings += audit_plan(compact, result)
    s = result.state
    return build_report(compact, result.evaluation, s.q, s.status, s.gap, result.wall_time,
                        result.mp_time, result.sp_time, warnings, seed)
