"""Thin LP/MILP modelling layer over the HiGHS solvers shipped with scipy.

Every other module builds its optimisation problems through :class:`Model`.
Inequalities are normalised to ``a.y <= b`` on entry, so the reported duals
follow one convention everywhere: for

    min  c.y   s.t.  E y = h,  P y <= r

the multipliers satisfy ``lambda >= 0`` and ``P'lambda + E'mu + c = 0``
(plus the multipliers of any finite variable bounds), and the dual objective
is ``-r.lambda - h.mu``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

INF = math.inf
CONTINUOUS = "continuous"
BINARY = "binary"

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_TIME_LIMIT = "time-limit"
STATUS_ERROR = "error"


class ModelError(ValueError):
    """Malformed model input (duplicate ids, non-finite data, unknown names)."""


class SolverError(RuntimeError):
    """The backend failed or returned something unusable."""


class DualityError(SolverError):
    """Extracted duals do not close the duality gap."""


class BackendUnavailable(SolverError):
    pass


def _backend():
    try:
        from scipy.optimize import linprog, milp
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise BackendUnavailable(
            "expected a HiGHS backend exposing scipy.optimize.linprog(method='highs') "
            "and scipy.optimize.milp (scipy >= 1.9)"
        ) from exc
    return linprog, milp


@dataclass
class SolverOptions:
    mip_gap: float = 1e-6
    time_limit_s: float | None = None
    # scipy's HiGHS bindings run single-threaded; kept for config compatibility.
    threads: int = 1
    presolve: bool = True


@dataclass
class Constraint:
    name: str
    cols: np.ndarray
    vals: np.ndarray
    sense: str  # "<=" or "=="
    rhs: float


@dataclass
class SolveResult:
    status: str
    objective: float | None = None
    values: np.ndarray | None = None
    duals_ineq: np.ndarray | None = None
    duals_eq: np.ndarray | None = None
    bound_duals_lower: np.ndarray | None = None
    bound_duals_upper: np.ndarray | None = None
    mip_gap: float | None = None
    dual_bound: float | None = None
    wall_time: float = 0.0
    message: str = ""
    var_index: Mapping[str, int] = field(default_factory=dict, repr=False)
    ineq_index: Mapping[str, int] = field(default_factory=dict, repr=False)
    eq_index: Mapping[str, int] = field(default_factory=dict, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL

    @property
    def has_duals(self) -> bool:
        return self.duals_ineq is not None

    def value(self, name: str) -> float:
        if self.values is None:
            raise SolverError(f"no primal solution (status {self.status})")
        return float(self.values[self.var_index[name]])

    def dual(self, name: str) -> float:
        """Multiplier of constraint ``name`` (lambda for rows, mu for equalities)."""
        if not self.has_duals:
            raise SolverError("duals are only available for LPs")
        if name in self.ineq_index:
            return float(self.duals_ineq[self.ineq_index[name]])
        return float(self.duals_eq[self.eq_index[name]])


def _check_finite(value: float, what: str) -> float:
    value = float(value)
    if math.isnan(value) or math.isinf(value):
        raise ModelError(f"non-finite {what}: {value}")
    return value


class Model:
    """A minimisation problem with named variables and named constraints."""

    def __init__(self, name: str = "model"):
        self.name = name
        self._var_index: dict[str, int] = {}
        self._names: list[str] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._kind: list[str] = []
        self._obj: dict[int, float] = {}
        self.obj_constant = 0.0
        self._rows: list[Constraint] = []
        self._row_index: dict[str, int] = {}

    # -- registry ---------------------------------------------------------
    @property
    def num_vars(self) -> int:
        return len(self._names)

    @property
    def var_names(self) -> list[str]:
        return list(self._names)

    @property
    def constraints(self) -> list[Constraint]:
        return list(self._rows)

    def has_var(self, name: str) -> bool:
        return name in self._var_index

    def var(self, name: str) -> int:
        try:
            return self._var_index[name]
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    def kind(self, name: str) -> str:
        return self._kind[self.var(name)]

    def bounds(self, name: str) -> tuple[float, float]:
        i = self.var(name)
        return self._lb[i], self._ub[i]

    def constraint(self, name: str) -> Constraint:
        try:
            return self._rows[self._row_index[name]]
        except KeyError:
            raise ModelError(f"unknown constraint {name!r}") from None

    def has_constraint(self, name: str) -> bool:
        return name in self._row_index

    def tagged(self, prefix: str) -> list[str]:
        return [r.name for r in self._rows if r.name == prefix or r.name.startswith(prefix + "_")]

    # -- building ---------------------------------------------------------
    def add_variable(self, name: str, lb: float = 0.0, ub: float = INF,
                     kind: str = CONTINUOUS, obj: float = 0.0) -> int:
        if name in self._var_index:
            raise ModelError(f"duplicate variable id {name!r}")
        if kind not in (CONTINUOUS, BINARY):
            raise ModelError(f"unknown variable kind {kind!r}")
        lb, ub = float(lb), float(ub)
        if math.isnan(lb) or math.isnan(ub):
            raise ModelError(f"NaN bound on {name!r}")
        if kind == BINARY:
            if not (lb in (0.0, 1.0) and ub in (0.0, 1.0) and lb <= ub):
                raise ModelError(f"binary {name!r} must have bounds within {{0,1}}")
        elif lb > ub:
            raise ModelError(f"empty bounds on {name!r}: [{lb}, {ub}]")
        idx = len(self._names)
        self._var_index[name] = idx
        self._names.append(name)
        self._lb.append(lb)
        self._ub.append(ub)
        self._kind.append(kind)
        if obj:
            self._obj[idx] = _check_finite(obj, f"objective coefficient of {name!r}")
        return idx

    def add_variables(self, names: Sequence[str], lb=0.0, ub=INF, kind: str = CONTINUOUS,
                      obj=0.0) -> np.ndarray:
        n = len(names)
        lb = np.broadcast_to(np.asarray(lb, dtype=float), (n,))
        ub = np.broadcast_to(np.asarray(ub, dtype=float), (n,))
        obj = np.broadcast_to(np.asarray(obj, dtype=float), (n,))
        return np.array([self.add_variable(nm, lb[i], ub[i], kind, obj[i])
                         for i, nm in enumerate(names)], dtype=int)

    def set_bounds(self, name: str, lb: float, ub: float) -> None:
        i = self.var(name)
        if lb > ub:
            raise ModelError(f"empty bounds on {name!r}: [{lb}, {ub}]")
        self._lb[i], self._ub[i] = float(lb), float(ub)

    def add_constraint(self, name: str, coeffs: Mapping[str, float] | Iterable[tuple[str, float]],
                       sense: str, rhs: float) -> int:
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        acc: dict[int, float] = {}
        for vname, coef in items:
            coef = _check_finite(coef, f"coefficient of {vname!r} in {name!r}")
            j = self.var(vname)
            acc[j] = acc.get(j, 0.0) + coef
        cols = np.fromiter(acc.keys(), dtype=int, count=len(acc))
        vals = np.fromiter(acc.values(), dtype=float, count=len(acc))
        return self._append_row(name, cols, vals, sense, rhs)

    def add_rows(self, names: Sequence[str], matrix, cols: Sequence[int], sense: str,
                 rhs: Sequence[float]) -> None:
        """Add ``matrix[:, j]`` acting on model variables ``cols[j]`` as rows."""
        mat = sp.csr_matrix(matrix)
        cols = np.asarray(cols, dtype=int)
        rhs = np.asarray(rhs, dtype=float)
        if not np.all(np.isfinite(mat.data)):
            raise ModelError("non-finite coefficient in row block")
        for i, nm in enumerate(names):
            lo, hi = mat.indptr[i], mat.indptr[i + 1]
            self._append_row(nm, cols[mat.indices[lo:hi]], mat.data[lo:hi].copy(), sense, rhs[i])

    def _append_row(self, name, cols, vals, sense, rhs) -> int:
        if name in self._row_index:
            raise ModelError(f"duplicate constraint id {name!r}")
        rhs = _check_finite(rhs, f"right-hand side of {name!r}")
        if sense == ">=":
            vals, rhs, sense = -vals, -rhs, "<="
        elif sense not in ("<=", "=="):
            raise ModelError(f"unknown sense {sense!r}")
        keep = vals != 0.0
        row = Constraint(name, cols[keep], vals[keep], sense, rhs)
        self._row_index[name] = len(self._rows)
        self._rows.append(row)
        return len(self._rows) - 1

    def set_objective(self, coeffs: Mapping[str, float], constant: float = 0.0) -> None:
        self._obj = {}
        for vname, coef in coeffs.items():
            coef = _check_finite(coef, f"objective coefficient of {vname!r}")
            j = self.var(vname)
            self._obj[j] = self._obj.get(j, 0.0) + coef
        self.obj_constant = _check_finite(constant, "objective constant")

    def add_objective_terms(self, coeffs: Mapping[str, float]) -> None:
        for vname, coef in coeffs.items():
            j = self.var(vname)
            self._obj[j] = self._obj.get(j, 0.0) + _check_finite(coef, "objective coefficient")

    def copy(self) -> "Model":
        other = Model(self.name)
        other._var_index = dict(self._var_index)
        other._names = list(self._names)
        other._lb = list(self._lb)
        other._ub = list(self._ub)
        other._kind = list(self._kind)
        other._obj = dict(self._obj)
        other.obj_constant = self.obj_constant
        other._rows = list(self._rows)
        other._row_index = dict(self._row_index)
        return other

    def fix(self, values: Mapping[str, float]) -> "Model":
        other = self.copy()
        for name, v in values.items():
            other.set_bounds(name, v, v)
        return other

    # -- introspection ------------------------------------------------------
    @property
    def integer_vars(self) -> list[str]:
        return [n for n, k in zip(self._names, self._kind) if k == BINARY]

    @property
    def is_mip(self) -> bool:
        return any(k == BINARY and lo < hi
                   for k, lo, hi in zip(self._kind, self._lb, self._ub))

    def size(self) -> dict[str, int]:
        n_eq = sum(1 for r in self._rows if r.sense == "==")
        return {
            "variables": self.num_vars,
            "binary": len(self.integer_vars),
            "continuous": self.num_vars - len(self.integer_vars),
            "equalities": n_eq,
            "inequalities": len(self._rows) - n_eq,
        }

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.num_vars)
        for j, v in self._obj.items():
            c[j] = v
        return c

    def _stack(self, rows: list[Constraint]) -> sp.csr_matrix:
        n = self.num_vars
        if not rows:
            return sp.csr_matrix((0, n))
        indptr = np.zeros(len(rows) + 1, dtype=int)
        indptr[1:] = np.cumsum([len(r.cols) for r in rows])
        indices = np.concatenate([r.cols for r in rows]) if indptr[-1] else np.zeros(0, int)
        data = np.concatenate([r.vals for r in rows]) if indptr[-1] else np.zeros(0)
        return sp.csr_matrix((data, indices, indptr), shape=(len(rows), n))

    def matrices(self):
        """Return ``(c, A_ub, b_ub, A_eq, b_eq, lb, ub, integrality, ineq, eq)``."""
        ineq = [r for r in self._rows if r.sense == "<="]
        eq = [r for r in self._rows if r.sense == "=="]
        return (
            self.objective_vector(),
            self._stack(ineq), np.array([r.rhs for r in ineq]),
            self._stack(eq), np.array([r.rhs for r in eq]),
            np.array(self._lb), np.array(self._ub),
            np.array([1 if k == BINARY else 0 for k in self._kind]),
            [r.name for r in ineq], [r.name for r in eq],
        )

    # -- solving ----------------------------------------------------------
    def solve(self, options: SolverOptions | None = None) -> SolveResult:
        options = options or SolverOptions()
        if self.is_mip:
            return self._solve_mip(options)
        return self._solve_lp(options)

    def _solve_lp(self, options: SolverOptions) -> SolveResult:
        linprog, _ = _backend()
        c, A_ub, b_ub, A_eq, b_eq, lb, ub, _, ineq, eq = self.matrices()
        opts = {"presolve": options.presolve,
                "primal_feasibility_tolerance": 1e-9,
                "dual_feasibility_tolerance": 1e-9}
        if options.time_limit_s:
            opts["time_limit"] = float(options.time_limit_s)
        t0 = time.perf_counter()
        res = linprog(
            c,
            A_ub=A_ub if A_ub.shape[0] else None, b_ub=b_ub if A_ub.shape[0] else None,
            A_eq=A_eq if A_eq.shape[0] else None, b_eq=b_eq if A_eq.shape[0] else None,
            bounds=np.column_stack([lb, ub]) if self.num_vars else None,
            method="highs", options=opts,
        )
        wall = time.perf_counter() - t0
        out = SolveResult(status=_lp_status(res.status), wall_time=wall, message=res.message,
                          var_index=self._var_index,
                          ineq_index={n: i for i, n in enumerate(ineq)},
                          eq_index={n: i for i, n in enumerate(eq)})
        if out.status != STATUS_OPTIMAL:
            return out
        out.values = np.asarray(res.x, dtype=float)
        out.objective = float(res.fun) + self.obj_constant
        out.mip_gap = 0.0
        out.dual_bound = out.objective
        lam = -np.asarray(res.ineqlin.marginals) if A_ub.shape[0] else np.zeros(0)
        mu = -np.asarray(res.eqlin.marginals) if A_eq.shape[0] else np.zeros(0)
        out.duals_ineq = np.maximum(lam, 0.0)
        out.duals_eq = mu
        out.bound_duals_lower = np.asarray(res.lower.marginals)
        out.bound_duals_upper = np.asarray(res.upper.marginals)
        dual_obj = _dual_objective(out, b_ub, b_eq, lb, ub) + self.obj_constant
        tol = 1e-6 * max(1.0, abs(out.objective))
        if abs(dual_obj - out.objective) > tol:
            raise DualityError(
                f"{self.name}: strong duality violated, primal {out.objective:.10g} "
                f"vs dual {dual_obj:.10g}")
        return out

    def _solve_mip(self, options: SolverOptions) -> SolveResult:
        _, milp = _backend()
        from scipy.optimize import Bounds, LinearConstraint

        c, A_ub, b_ub, A_eq, b_eq, lb, ub, integrality, ineq, eq = self.matrices()
        cons = []
        if A_ub.shape[0]:
            cons.append(LinearConstraint(A_ub, -np.inf, b_ub))
        if A_eq.shape[0]:
            cons.append(LinearConstraint(A_eq, b_eq, b_eq))
        opts = {"mip_rel_gap": options.mip_gap, "presolve": options.presolve}
        if options.time_limit_s:
            opts["time_limit"] = float(options.time_limit_s)
        t0 = time.perf_counter()
        res = milp(c, integrality=integrality, bounds=Bounds(lb, ub), constraints=cons,
                   options=opts)
        wall = time.perf_counter() - t0
        status = _milp_status(res.status)
        out = SolveResult(status=status, wall_time=wall, message=res.message,
                          var_index=self._var_index,
                          ineq_index={n: i for i, n in enumerate(ineq)},
                          eq_index={n: i for i, n in enumerate(eq)})
        if res.x is not None:
            x = np.asarray(res.x, dtype=float)
            x[integrality == 1] = np.round(x[integrality == 1])
            out.values = x
            out.objective = float(c @ x) + self.obj_constant
            out.mip_gap = getattr(res, "mip_gap", None)
            bound = getattr(res, "mip_dual_bound", None)
            if bound is not None and np.isfinite(bound):
                out.dual_bound = float(bound) + self.obj_constant
        return out

    # -- serialisation --------------------------------------------------------
    def to_lp(self) -> str:
        """CPLEX-LP text. Identical models give identical text."""
        def linexpr(cols, vals) -> str:
            if len(cols) == 0:
                return "0 " + (self._names[0] if self._names else "x")
            parts = []
            for i, k in enumerate(np.argsort(cols, kind="stable")):
                coef, name = vals[k], self._names[cols[k]]
                sign = ("-" if coef < 0 else "") if i == 0 else (" - " if coef < 0 else " + ")
                parts.append(f"{sign}{abs(coef):.17g} {name}")
            return "".join(parts)

        lines = [f"\\ {self.name}", "Minimize"]
        cols = np.array(sorted(self._obj), dtype=int)
        vals = np.array([self._obj[j] for j in cols], dtype=float)
        obj = linexpr(cols, vals) if len(cols) else "0"
        if self.obj_constant:
            obj += f" + {self.obj_constant:.17g} obj_constant"
        lines.append(f" obj: {obj}")
        lines.append("Subject To")
        for r in self._rows:
            op = "<=" if r.sense == "<=" else "="
            lines.append(f" {r.name}: {linexpr(r.cols, r.vals)} {op} {r.rhs:.17g}")
        lines.append("Bounds")
        for n, lo, hi, k in zip(self._names, self._lb, self._ub, self._kind):
            if k == BINARY and lo == 0.0 and hi == 1.0:
                continue
            if lo == -INF and hi == INF:
                lines.append(f" {n} free")
            else:
                lo_s = "-inf" if lo == -INF else f"{lo:.17g}"
                hi_s = "+inf" if hi == INF else f"{hi:.17g}"
                lines.append(f" {lo_s} <= {n} <= {hi_s}")
        if self.obj_constant:
            lines.append(" obj_constant = 1")
        bins = [n for n, k in zip(self._names, self._kind) if k == BINARY]
        if bins:
            lines.append("Binaries")
            lines.extend(f" {n}" for n in bins)
        lines.append("End")
        return "\n".join(lines) + "\n"

    def write_lp(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_lp())


def _dual_objective(res: SolveResult, b_ub, b_eq, lb, ub) -> float:
    val = -float(res.duals_ineq @ b_ub) if len(b_ub) else 0.0
    if len(b_eq):
        val -= float(res.duals_eq @ b_eq)
    lo_fin = np.isfinite(lb)
    hi_fin = np.isfinite(ub)
    val += float(res.bound_duals_lower[lo_fin] @ lb[lo_fin])
    val += float(res.bound_duals_upper[hi_fin] @ ub[hi_fin])
    return val


def _lp_status(code: int) -> str:
    return {0: STATUS_OPTIMAL, 1: STATUS_TIME_LIMIT, 2: STATUS_INFEASIBLE,
            3: STATUS_UNBOUNDED}.get(code, STATUS_ERROR)


def _milp_status(code: int) -> str:
    return {0: STATUS_OPTIMAL, 1: STATUS_TIME_LIMIT, 2: STATUS_INFEASIBLE,
            3: STATUS_UNBOUNDED}.get(code, STATUS_ERROR)


def fix_and_dualize(model: Model, fixings: Mapping[str, float],
                    options: SolverOptions | None = None) -> SolveResult:
    """Fix every binary variable and solve the remaining LP, returning its duals."""
    fixed = model.fix(fixings)
    loose = [n for n in fixed.integer_vars if fixed.bounds(n)[0] != fixed.bounds(n)[1]]
    if loose:
        raise ModelError(f"binary variables left unfixed: {loose[:5]}")
    res = fixed.solve(options)
    if res.status == STATUS_INFEASIBLE:
        raise SolverError(f"{model.name}: infeasible after fixing binaries")
    if not res.optimal:
        raise SolverError(f"{model.name}: LP after fixing ended with status {res.status}")
    return res
