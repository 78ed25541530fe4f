"""Per-scenario market clearing: DCOPF in Btheta and shift-factor form, and the
FACTS-aware lower-level problem used by the planner.

Every bound is written as an explicit inequality row (variables are free), so
row counts follow the usual model-size accounting and the lower level maps
directly onto the ``E y = h, P y + Q z <= r - K x`` structure.

Units: MW and $/h.  Scenario weights are applied only by the planner.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .devices import (DeviceCatalog, InjectionBlock, pst_injection_block,
                      vsr_injection_block)
from .milp_core import BINARY, INF, Model, SolveResult, SolverError, SolverOptions
from .network import NetworkCase, PtdfMatrix, branch_susceptance, compute_ptdf
from .scenarios import ScenarioData

logger = logging.getLogger(__name__)

BTHETA = "btheta"
SHIFT_FACTOR = "shift-factor"
FORMULATIONS = (BTHETA, SHIFT_FACTOR)
DEFAULT_BETA = 5000.0
H_EPS = 1e-12


class MarketError(ValueError):
    pass


def _norm_formulation(formulation: str) -> str:
    f = formulation.lower().replace("_", "-")
    if f in ("btheta", "bθ", "b-theta"):
        return BTHETA
    if f in ("shift-factor", "shiftfactor", "ptdf", "sf"):
        return SHIFT_FACTOR
    raise MarketError(f"unknown formulation {formulation!r}")


def pg(gid): return f"pg_{gid}"
def pw(wid): return f"pw_{wid}"
def psp(wid): return f"psp_{wid}"
def dp(mid): return f"dp_{mid}"
def flow(kid): return f"flow_{kid}"
def theta(bid): return f"theta_{bid}"
def delta(kid): return f"delta_{kid}"
def alpha(kid): return f"alpha_{kid}"


@dataclass
class MarketModel:
    model: Model
    case: NetworkCase
    scenario: ScenarioData
    formulation: str
    kind: str  # "dcopf" or "lower-level"
    flow_branches: tuple[str, ...]
    limited_branches: tuple[str, ...]
    shedding: bool
    spillage: bool
    blocks: dict[str, InjectionBlock] = field(default_factory=dict)
    x_vars: tuple[str, ...] = ()

    def size(self) -> dict[str, int]:
        return self.model.size()

    def dump(self, path) -> None:
        self.model.write_lp(path)


@dataclass
class MarketOutcome:
    status: str
    objective: float | None
    dispatch: np.ndarray
    wind_used: np.ndarray
    spillage: np.ndarray
    shedding: np.ndarray
    flows: dict[str, float]
    effective_flows: dict[str, float]
    psi_vsr: dict[str, float]
    psi_pst: dict[str, float]
    implied_db: dict[str, float]
    implied_angle: dict[str, float]
    result: SolveResult | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def expected_dcopf_size(n_b: int, n_l: int, n_g: int, formulation: str) -> dict[str, int]:
    """Expected DCOPF size: variables, equalities, inequalities."""
    if _norm_formulation(formulation) == BTHETA:
        return {"variables": n_b + n_l + n_g, "equalities": n_l + n_b + 1,
                "inequalities": 2 * n_l + 2 * n_g}
    return {"variables": n_g + n_l, "equalities": n_l + 1, "inequalities": 2 * n_l + 2 * n_g}


# -- shared pieces ----------------------------------------------------------------

def _bus_terms(case: NetworkCase, shedding: bool, wind: bool) -> list[list[tuple[str, float]]]:
    """Per bus: controllable injection terms (gen, wind, shed)."""
    terms: list[list[tuple[str, float]]] = [[] for _ in case.buses]
    for g, i in zip(case.generators, case.gen_bus_idx()):
        terms[i].append((pg(g.id), 1.0))
    if wind:
        for w, i in zip(case.wind_farms, case.wind_bus_idx()):
            terms[i].append((pw(w.id), 1.0))
    if shedding:
        for d, i in zip(case.loads, case.load_bus_idx()):
            terms[i].append((dp(d.id), 1.0))
    return terms


def _bus_load(case: NetworkCase, scen: ScenarioData) -> np.ndarray:
    load = np.zeros(case.n_bus)
    if len(case.loads):
        np.add.at(load, case.load_bus_idx(), scen.load_mw)
    return load


def _add_resources(m: Model, case: NetworkCase, scen: ScenarioData, shedding: bool,
                   spillage: bool, gen_obj: bool = True, beta: float = DEFAULT_BETA,
                   eq_ids=("31d", "12i", "12n", "12h")) -> None:
    tag_gen, tag_wind, tag_shed, tag_spill = eq_ids
    for g in case.generators:
        m.add_variable(pg(g.id), -INF, INF, obj=g.cost if gen_obj else 0.0)
        m.add_constraint(f"eq{tag_gen}lo_{g.id}", {pg(g.id): -1.0}, "<=", -g.p_min)
        m.add_constraint(f"eq{tag_gen}hi_{g.id}", {pg(g.id): 1.0}, "<=", g.p_max)
    for w, avail in zip(case.wind_farms, scen.wind_mw):
        m.add_variable(pw(w.id), -INF, INF)
        m.add_constraint(f"eq{tag_wind}lo_{w.id}", {pw(w.id): -1.0}, "<=", 0.0)
        m.add_constraint(f"eq{tag_wind}hi_{w.id}", {pw(w.id): 1.0}, "<=", float(avail))
        if spillage:
            m.add_variable(psp(w.id), -INF, INF)
            m.add_constraint(f"eq{tag_spill}_{w.id}", {psp(w.id): 1.0, pw(w.id): 1.0}, "==",
                             float(avail))
    if shedding:
        for d, pd_ in zip(case.loads, scen.load_mw):
            m.add_variable(dp(d.id), -INF, INF, obj=beta)
            m.add_constraint(f"eq{tag_shed}lo_{d.id}", {dp(d.id): -1.0}, "<=", 0.0)
            m.add_constraint(f"eq{tag_shed}hi_{d.id}", {dp(d.id): 1.0}, "<=", float(pd_))


def _facts_transfer(case: NetworkCase, blocks: Mapping[str, InjectionBlock]):
    """Per bus: FACTS injection terms (-psi at the from bus, +psi at the to bus)."""
    terms: list[list[tuple[str, float]]] = [[] for _ in case.buses]
    for blk in blocks.values():
        k = case.branch_index[blk.branch]
        terms[case.from_idx[k]].append((blk.psi, -1.0))
        terms[case.to_idx[k]].append((blk.psi, 1.0))
    return terms


def _add_btheta_vars(m: Model, case: NetworkCase):
    for bus in case.buses:
        m.add_variable(theta(bus.id), -INF, INF)
    for br in case.branches:
        m.add_variable(flow(br.id), -INF, INF)


def _add_btheta_network(m: Model, case: NetworkCase, scen: ScenarioData,
                        inj_terms, facts_terms, eq_flow="31b", eq_node="31c", eq_ref="31f"):
    b = branch_susceptance(case) * case.base_mva
    for k, br in enumerate(case.branches):
        m.add_constraint(f"eq{eq_flow}_{br.id}",
                         [(flow(br.id), 1.0), (theta(br.from_bus), -b[k]), (theta(br.to_bus), b[k])],
                         "==", 0.0)
    load = _bus_load(case, scen)
    out_terms: list[list[tuple[str, float]]] = [[] for _ in case.buses]
    for k, br in enumerate(case.branches):
        out_terms[case.from_idx[k]].append((flow(br.id), -1.0))
        out_terms[case.to_idx[k]].append((flow(br.id), 1.0))
    for i, bus in enumerate(case.buses):
        m.add_constraint(f"eq{eq_node}_{bus.id}", inj_terms[i] + facts_terms[i] + out_terms[i],
                         "==", float(load[i]))
    ref = case.buses[case.ref_index].id
    m.add_constraint(f"eq{eq_ref}", {theta(ref): 1.0}, "==", 0.0)


def _add_sf_network(m: Model, case: NetworkCase, scen: ScenarioData, H: PtdfMatrix,
                    inj_terms, facts_terms, eq_flow="32b", eq_bal="32c"):
    load = _bus_load(case, scen)
    for r, kid in enumerate(H.branch_ids):
        h = H.H[r]
        terms: dict[str, float] = {flow(kid): 1.0}
        for i in np.flatnonzero(np.abs(h) > H_EPS):
            for name, sgn in inj_terms[i] + facts_terms[i]:
                terms[name] = terms.get(name, 0.0) - h[i] * sgn
        m.add_constraint(f"eq{eq_flow}_{kid}", terms, "==", float(-h @ load))
    bal: list[tuple[str, float]] = [t for ts in inj_terms for t in ts]
    m.add_constraint(f"eq{eq_bal}", bal, "==", float(load.sum()))


def _add_limit(m: Model, tag: str, kid: str, terms, s_max: float):
    m.add_constraint(f"eq{tag}lo_{kid}", [(n, -c) for n, c in terms], "<=", s_max)
    m.add_constraint(f"eq{tag}hi_{kid}", list(terms), "<=", s_max)


# -- DCOPF -----------------------------------------------------------------------

def build_dcopf(case: NetworkCase, scenario: ScenarioData, formulation: str = SHIFT_FACTOR,
                ptdf: PtdfMatrix | None = None, shedding: bool = False,
                beta: float = DEFAULT_BETA) -> MarketModel:
    """Plain DCOPF without devices.

    Wind farms enter as zero-cost generators bounded by their available
    output, so they count towards ``n_g`` in the size accounting; with
    ``shedding`` each load adds one variable and two rows.
    """
    f = _norm_formulation(formulation)
    m = Model(f"dcopf_{f}_s{scenario.id}")
    gen_tag = "31d" if f == BTHETA else "32d"
    _add_resources(m, case, scenario, shedding, spillage=False, beta=beta,
                   eq_ids=(gen_tag, gen_tag + "w", "shed", "12h"))
    inj = _bus_terms(case, shedding, wind=True)
    facts = [[] for _ in case.buses]
    if f == BTHETA:
        _add_btheta_vars(m, case)
        _add_btheta_network(m, case, scenario, inj, facts)
        limited = tuple(k.id for k in case.branches)
        flows = limited
        tag = "31e"
    else:
        if ptdf is None:
            raise MarketError("shift-factor DCOPF requires a PTDF matrix")
        for kid in ptdf.branch_ids:
            m.add_variable(flow(kid), -INF, INF)
        _add_sf_network(m, case, scenario, ptdf, inj, facts)
        limited = flows = ptdf.branch_ids
        tag = "32e"
    smax = dict(zip((k.id for k in case.branches), case.s_max))
    for kid in limited:
        _add_limit(m, tag, kid, [(flow(kid), 1.0)], smax[kid])
    return MarketModel(m, case, scenario, f, "dcopf", tuple(flows), tuple(limited),
                       shedding, False)


# -- lower level -------------------------------------------------------------------

def build_lower_level(case: NetworkCase, scenario: ScenarioData, catalog: DeviceCatalog,
                      H: PtdfMatrix | None = None, x: Mapping[str, float] | None = None,
                      directions: Mapping[str, str] | None = None,
                      formulation: str = SHIFT_FACTOR, monitored: Sequence[str] | None = None,
                      beta: float = DEFAULT_BETA) -> MarketModel:
    """FACTS-aware market clearing for one scenario.

    ``x`` maps ``delta_<branch>`` / ``alpha_<branch>`` to fixed 0/1 values;
    when ``x`` is None the investment decisions are added as linked binary
    variables (used to extract the compact form).  ``directions`` maps VSR
    candidates to ``"positive"``, ``"negative"`` or ``"free"``.

    Shift-factor form: flows exist for the rows of ``H`` and every row is
    limited.  Btheta form: flows exist for all branches and only ``monitored``
    (default: all) branches are limited.
    """
    f = _norm_formulation(formulation)
    directions = directions or {}
    m = Model(f"lower_{f}_s{scenario.id}")
    _add_resources(m, case, scenario, shedding=True, spillage=True, beta=beta,
                   eq_ids=("12j", "12i", "12n", "12h"))

    linked = x is None
    x_vars = []
    if linked:
        for c in catalog.vsr:
            m.add_variable(delta(c.branch), 0, 1, BINARY)
            x_vars.append(delta(c.branch))
        for c in catalog.pst:
            m.add_variable(alpha(c.branch), 0, 1, BINARY)
            x_vars.append(alpha(c.branch))

    def decision(name):
        return name if linked else float(x.get(name, 0.0))

    if f == SHIFT_FACTOR:
        if H is None:
            H = compute_ptdf(case)
        flow_branches = H.branch_ids
        missing = [b for b in catalog.candidate_ids if b not in flow_branches]
        if missing:
            raise MarketError(f"candidate branch absent from H rows: {missing}")
        for kid in flow_branches:
            m.add_variable(flow(kid), -INF, INF)
    else:
        flow_branches = tuple(k.id for k in case.branches)
        _add_btheta_vars(m, case)

    blocks: dict[str, InjectionBlock] = {}
    for c in catalog.pst:
        blocks[f"pst:{c.branch}"] = pst_injection_block(m, case, c, decision(alpha(c.branch)))
    for c in catalog.vsr:
        blocks[f"vsr:{c.branch}"] = vsr_injection_block(
            m, c, decision(delta(c.branch)), flow(c.branch), directions.get(c.branch, "free"))

    inj = _bus_terms(case, shedding=True, wind=True)
    facts = _facts_transfer(case, blocks)
    if f == SHIFT_FACTOR:
        _add_sf_network(m, case, scenario, H, inj, facts, eq_flow="12f", eq_bal="12g")
        limited = flow_branches
    else:
        _add_btheta_network(m, case, scenario, inj, facts)
        limited = tuple(str(k) for k in monitored) if monitored is not None else flow_branches
        missing = [b_ for b_ in catalog.candidate_ids if b_ not in limited]
        limited = tuple(limited) + tuple(missing)

    smax = dict(zip((k.id for k in case.branches), case.s_max))
    vsr_ids, pst_ids = set(catalog.vsr_ids), set(catalog.pst_ids)
    for kid in limited:
        terms = [(flow(kid), 1.0)]
        if kid in vsr_ids:
            terms.append((blocks[f"vsr:{kid}"].psi, 1.0))
        if kid in pst_ids:
            terms.append((blocks[f"pst:{kid}"].psi, 1.0))
        # a shared candidate carries both injections in one row; at most one is nonzero
        tag = {(True, False): "12l", (False, True): "12m", (True, True): "12lm"}.get(
            (kid in vsr_ids, kid in pst_ids), "12k")
        _add_limit(m, tag, kid, terms, smax[kid])
    return MarketModel(m, case, scenario, f, "lower-level", tuple(flow_branches), tuple(limited),
                       True, True, blocks, tuple(x_vars))


# -- solving -----------------------------------------------------------------------

def outcome_from_result(mm: MarketModel, res: SolveResult) -> MarketOutcome:
    case = mm.case
    if res.values is None:
        raise SolverError(f"{mm.model.name}: solve ended with status {res.status}")
    val = res.value
    dispatch = np.array([val(pg(g.id)) for g in case.generators])
    wind = np.array([val(pw(w.id)) for w in case.wind_farms])
    spill = (np.array([val(psp(w.id)) for w in case.wind_farms]) if mm.spillage
             else mm.scenario.wind_mw - wind)
    shed = (np.array([val(dp(d.id)) for d in case.loads]) if mm.shedding
            else np.zeros(len(case.loads)))
    flows = {k: val(flow(k)) for k in mm.flow_branches}
    eff = dict(flows)
    psi_v, psi_p, db, ang = {}, {}, {}, {}
    b = dict(zip((k.id for k in case.branches), branch_susceptance(case) * case.base_mva))
    for blk in mm.blocks.values():
        psi = val(blk.psi)
        eff[blk.branch] = eff[blk.branch] + psi
        if blk.kind == "vsr":
            psi_v[blk.branch] = psi
            pk = flows[blk.branch]
            db[blk.branch] = psi / pk if abs(pk) > 1e-9 else 0.0
        else:
            psi_p[blk.branch] = psi
            ang[blk.branch] = psi / b[blk.branch]
    return MarketOutcome(res.status, res.objective, dispatch, wind, spill, shed, flows, eff,
                         psi_v, psi_p, db, ang, res)


def solve_market(mm: MarketModel, options: SolverOptions | None = None,
                 dump_dir=None) -> MarketOutcome:
    res = mm.model.solve(options)
    if not res.optimal:
        path = None
        if dump_dir is not None:
            from pathlib import Path
            path = Path(dump_dir) / f"{mm.model.name}.lp"
            mm.dump(path)
        raise SolverError(f"{mm.model.name}: solver status {res.status} ({res.message})"
                          + (f"; model dumped to {path}" if path else ""))
    return outcome_from_result(mm, res)
