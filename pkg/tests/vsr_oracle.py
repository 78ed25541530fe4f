"""Feasible injection set of one VSR block at a fixed pre-device flow."""
from __future__ import annotations

from seriesfacts.devices import VsrCandidate, big_m_values, vsr_injection_block
from seriesfacts.milp_core import Model


def psi_intervals(p_k: float, db_min: float, db_max: float, s_max: float,
                  delta: float = 1.0, m_scales=(2.0, 3.5)) -> list[tuple[float, float]]:
    """Feasible psi interval for each value of the direction binary (empty ones dropped)."""
    m1, m2 = big_m_values(db_min, db_max, s_max, *m_scales)
    cand = VsrCandidate("K", db_min, db_max, m1, m2, 0.0, 0.0)
    out = []
    for u in (0.0, 1.0):
        ends = []
        for sign in (1.0, -1.0):
            m = Model("vsr_block")
            m.add_variable("flow_K", p_k, p_k)
            blk = vsr_injection_block(m, cand, delta, "flow_K")
            m.set_bounds(blk.binary, u, u)
            m.set_objective({blk.psi: sign})
            res = m.solve()
            if not res.optimal:
                break
            ends.append(sign * res.objective)
        if len(ends) == 2:
            out.append((ends[0], ends[1]))
    return out


def block_values(p_k: float, db_min: float, db_max: float, s_max: float, delta: float):
    """(psi, v) extreme values of the block when the investment is fixed to ``delta``."""
    m1, m2 = big_m_values(db_min, db_max, s_max)
    cand = VsrCandidate("K", db_min, db_max, m1, m2, 0.0, 0.0)
    vals = []
    for var in ("psiV_K", "v_K"):
        for sign in (1.0, -1.0):
            m = Model("vsr_block")
            m.add_variable("flow_K", p_k, p_k)
            vsr_injection_block(m, cand, delta, "flow_K")
            m.set_objective({var: sign})
            res = m.solve()
            vals.append(sign * res.objective)
    return vals
