"""Series FACTS device models: PST and VSR power-injection blocks and cost data.

A PST on branch k adds ``psi_P = alpha_k * b_k * theta_P`` to the line flow, a
VSR adds ``psi_V = delta_k * db_k * P_k`` where ``db_k`` is the relative
susceptance change.  Both are written as injections at the branch terminals so
the PTDF stays constant; the blocks below emit the exact mixed-integer
linearisation of those products.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

from .milp_core import BINARY, CONTINUOUS, INF, Model
from .network import NetworkCase, branch_susceptance

# a decision is either a fixed 0/1 parameter or the name of a model variable
Decision = Union[float, int, str]


class DeviceError(ValueError):
    pass


def delta_b_bounds(x_k: float, x_min_frac: float, x_max_frac: float) -> tuple[float, float]:
    """Range of the relative susceptance change for compensation ``x_k*[min_frac, max_frac]``."""
    if x_k <= 0:
        raise DeviceError("branch reactance must be positive")
    if x_min_frac <= -1.0:
        raise DeviceError("total reactance nonpositive")
    if x_min_frac > x_max_frac:
        raise DeviceError("compensation range is empty")
    x_min, x_max = x_min_frac * x_k, x_max_frac * x_k
    # 0.0 - 0.0 gives -0.0; normalise so zero ranges print cleanly
    db_min = -x_max / (x_k + x_max) + 0.0
    db_max = -x_min / (x_k + x_min) + 0.0
    return db_min, db_max


def big_m_values(db_min: float, db_max: float, s_max: float,
                 m1_scale: float = 2.0, m2_scale: float = 3.5) -> tuple[float, float]:
    m1 = m1_scale * max(abs(db_min), abs(db_max)) * s_max
    m2 = m2_scale * s_max
    return m1, m2


def pst_cost(s_max: float, per_kva: float = 100.0) -> float:
    """Total PST investment in $ for a line rated ``s_max`` MVA."""
    return per_kva * s_max * 1000.0


def tcsc_unit_cost(s_v: float) -> float:
    """TCSC cost in $/kVar at a compensation level of ``s_v`` MVar."""
    return 0.0015 * s_v ** 2 - 0.713 * s_v + 153.75


def tcsc_rating(s_max: float, s_base: float, x_comp: float) -> float:
    """Compensation level in MVar of a TCSC able to insert ``x_comp`` p.u."""
    return s_max ** 2 / s_base * x_comp


def tcsc_cost(s_max: float, s_base: float, x_comp: float) -> float:
    s_v = tcsc_rating(s_max, s_base, x_comp)
    return tcsc_unit_cost(s_v) * s_v * 1000.0


def annuity_factor(rate: float, lifetime: float) -> float:
    if rate <= 0 or lifetime < 1:
        raise DeviceError("annuity needs rate > 0 and lifetime >= 1")
    g = (1.0 + rate) ** lifetime
    return rate * g / (g - 1.0)


def annualize(cost: float, rate: float, lifetime: float) -> float:
    return cost * annuity_factor(rate, lifetime)


@dataclass(frozen=True)
class VsrCandidate:
    branch: str
    db_min: float
    db_max: float
    m1: float
    m2: float
    annual_cost: float
    total_cost: float


@dataclass(frozen=True)
class PstCandidate:
    branch: str
    theta_min: float  # rad
    theta_max: float
    annual_cost: float
    total_cost: float


@dataclass(frozen=True)
class DeviceSettings:
    comp_min_frac: float = -0.7
    comp_max_frac: float = 0.2
    angle_deg: float = 10.0
    pst_per_kva: float = 100.0
    rate: float = 0.05
    lifetime: float = 5.0
    m1_scale: float = 2.0
    m2_scale: float = 3.5


@dataclass(frozen=True)
class DeviceCatalog:
    vsr: tuple[VsrCandidate, ...] = ()
    pst: tuple[PstCandidate, ...] = ()
    settings: DeviceSettings = field(default_factory=DeviceSettings)

    @property
    def vsr_ids(self) -> tuple[str, ...]:
        return tuple(c.branch for c in self.vsr)

    @property
    def pst_ids(self) -> tuple[str, ...]:
        return tuple(c.branch for c in self.pst)

    @property
    def candidate_ids(self) -> tuple[str, ...]:
        seen = dict.fromkeys(self.vsr_ids + self.pst_ids)
        return tuple(seen)

    def vsr_by_branch(self, branch) -> VsrCandidate:
        for c in self.vsr:
            if c.branch == str(branch):
                return c
        raise DeviceError(f"branch {branch} not in VSR candidate set")

    def pst_by_branch(self, branch) -> PstCandidate:
        for c in self.pst:
            if c.branch == str(branch):
                return c
        raise DeviceError(f"branch {branch} not in PST candidate set")

    @property
    def shared(self) -> tuple[str, ...]:
        p = set(self.pst_ids)
        return tuple(b for b in self.vsr_ids if b in p)


def build_catalog(case: NetworkCase, vsr_branches: Sequence, pst_branches: Sequence,
                  settings: DeviceSettings | None = None,
                  m_overrides: Mapping[str, tuple[float, float]] | None = None) -> DeviceCatalog:
    """Candidate data for the given branch ids using ``settings`` for ranges and costs.

    The TCSC rating uses the larger-magnitude end of the compensation range as
    the maximum insertable reactance.
    """
    settings = settings or DeviceSettings()
    m_overrides = m_overrides or {}
    factor = annuity_factor(settings.rate, settings.lifetime)
    vsr = []
    for bid in vsr_branches:
        bid = str(bid)
        if bid not in case.branch_index:
            raise DeviceError(f"unknown VSR candidate branch {bid}")
        br = case.branches[case.branch_index[bid]]
        db_min, db_max = delta_b_bounds(br.x, settings.comp_min_frac, settings.comp_max_frac)
        m1, m2 = m_overrides.get(bid) or big_m_values(db_min, db_max, br.s_max,
                                                      settings.m1_scale, settings.m2_scale)
        if m1 <= 0 or m2 <= 0:
            raise DeviceError(f"degenerate big-M for VSR candidate {bid} (zero-width range?)")
        x_comp = max(abs(settings.comp_min_frac), abs(settings.comp_max_frac)) * br.x
        c = tcsc_cost(br.s_max, case.base_mva, x_comp)
        vsr.append(VsrCandidate(bid, db_min, db_max, m1, m2, c * factor, c))
    pst = []
    theta = math.radians(settings.angle_deg)
    for bid in pst_branches:
        bid = str(bid)
        if bid not in case.branch_index:
            raise DeviceError(f"unknown PST candidate branch {bid}")
        br = case.branches[case.branch_index[bid]]
        c = pst_cost(br.s_max, settings.pst_per_kva)
        pst.append(PstCandidate(bid, -theta, theta, c * factor, c))
    return DeviceCatalog(tuple(vsr), tuple(pst), settings)


# -- injection blocks ------------------------------------------------------------

@dataclass(frozen=True)
class InjectionBlock:
    branch: str
    kind: str  # "pst" or "vsr"
    psi: str
    variables: tuple[str, ...]
    constraints: tuple[str, ...]
    binary: str | None = None  # u_k when the flow direction is free


def _split(decision: Decision) -> tuple[str | None, float]:
    """(variable name, 0.0) or (None, fixed value)."""
    if isinstance(decision, str):
        return decision, 0.0
    value = float(decision)
    if value not in (0.0, 1.0):
        raise DeviceError(f"fixed decision must be 0 or 1, got {decision}")
    return None, value


def pst_injection_block(model: Model, case: NetworkCase, cand: PstCandidate, alpha: Decision,
                        suffix: str = "") -> InjectionBlock:
    """Emit ``alpha*b*theta_min <= psi <= alpha*b*theta_max`` (MW) for one PST candidate."""
    k = case.branch_index[cand.branch]
    b_mw = branch_susceptance(case)[k] * case.base_mva
    lo, hi = b_mw * cand.theta_min, b_mw * cand.theta_max
    psi = f"psiP_{cand.branch}{suffix}"
    model.add_variable(psi, -INF, INF)
    var, val = _split(alpha)
    c_lo, c_hi = f"eq2lo_{cand.branch}{suffix}", f"eq2hi_{cand.branch}{suffix}"
    if var is None:
        model.add_constraint(c_lo, {psi: -1.0}, "<=", -lo * val)
        model.add_constraint(c_hi, {psi: 1.0}, "<=", hi * val)
    else:
        model.add_constraint(c_lo, [(psi, -1.0), (var, lo)], "<=", 0.0)
        model.add_constraint(c_hi, [(psi, 1.0), (var, -hi)], "<=", 0.0)
    return InjectionBlock(cand.branch, "pst", psi, (psi,), (c_lo, c_hi))


def vsr_injection_block(model: Model, cand: VsrCandidate, delta: Decision, flow: str,
                        direction: str = "free", suffix: str = "") -> InjectionBlock:
    """Emit the VSR linearisation on the pre-device flow variable ``flow`` (MW).

    Variables: ``psi`` (injection), ``v = delta*flow`` and the direction binary
    ``u`` (``u = 0`` for flow from the from-bus to the to-bus).  With
    ``direction`` set to ``"positive"`` or ``"negative"`` the binary is replaced
    by its fixed value.
    """
    b = cand.branch
    psi, v, u = f"psiV_{b}{suffix}", f"v_{b}{suffix}", f"u_{b}{suffix}"
    dmin, dmax, m1, m2 = cand.db_min, cand.db_max, cand.m1, cand.m2
    model.add_variable(psi, -INF, INF)
    model.add_variable(v, -INF, INF)
    if direction == "free":
        model.add_variable(u, 0, 1, BINARY)
        u_var, u_val = u, 0.0
    elif direction in ("positive", "negative"):
        u_var, u_val = None, (0.0 if direction == "positive" else 1.0)
    else:
        raise DeviceError(f"unknown direction verdict {direction!r}")
    d_var, d_val = _split(delta)

    names = []

    def row(tag, terms, rhs, d_coef=0.0, u_coef=0.0):
        # terms + d_coef*delta + u_coef*u <= rhs
        terms = list(terms)
        if d_coef:
            if d_var is None:
                rhs -= d_coef * d_val
            else:
                terms.append((d_var, d_coef))
        if u_coef:
            if u_var is None:
                rhs -= u_coef * u_val
            else:
                terms.append((u_var, u_coef))
        name = f"{tag}_{b}{suffix}"
        model.add_constraint(name, terms, "<=", rhs)
        names.append(name)

    # (8)  -delta*M2 <= v <= delta*M2
    row("eq8lo", [(v, -1.0)], 0.0, d_coef=-m2)
    row("eq8hi", [(v, 1.0)], 0.0, d_coef=-m2)
    # (9)  P - (1-delta)*M2 <= v <= P + (1-delta)*M2
    row("eq9lo", [(flow, 1.0), (v, -1.0)], m2, d_coef=m2)
    row("eq9hi", [(v, 1.0), (flow, -1.0)], m2, d_coef=m2)
    # (10) -M1*u + v*dmin <= psi <= v*dmax + M1*u
    row("eq10lo", [(v, dmin), (psi, -1.0)], 0.0, u_coef=-m1)
    row("eq10hi", [(psi, 1.0), (v, -dmax)], 0.0, u_coef=-m1)
    # (11) -M1*(1-u) + v*dmax <= psi <= v*dmin + M1*(1-u)
    row("eq11lo", [(v, dmax), (psi, -1.0)], m1, u_coef=m1)
    row("eq11hi", [(psi, 1.0), (v, -dmin)], m1, u_coef=m1)
    variables = (psi, v) + ((u,) if u_var else ())
    return InjectionBlock(b, "vsr", psi, variables, tuple(names), u if u_var else None)
