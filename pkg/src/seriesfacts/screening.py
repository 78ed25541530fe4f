"""Candidate screening and lower-level reduction heuristics.

* Reactance sensitivity ``eta_kt = d cost_t / d x_k`` by central finite
  differences of the devices-off DCOPF cost, weighted over scenarios as
  ``sum_t N_t |eta_kt * x_k|`` and ranked.
* Flow-direction fixing: a candidate whose devices-off flow keeps one sign
  (outside a dead-band) in every scenario gets its direction binary fixed.
* Line monitoring: lines that never load above a threshold lose their flow
  limits in the lower level.
"""
from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .market import BTHETA, DEFAULT_BETA, build_dcopf, solve_market
from .network import NetworkCase
from .scenarios import ScenarioData

logger = logging.getLogger(__name__)

POSITIVE, NEGATIVE, FREE = "positive", "negative", "free"
BINDING_TOL = 1e-6


@dataclass(frozen=True)
class ScreeningConfig:
    top_n_vsr: int = 10
    top_n_pst: int = 10
    threshold: float = 0.60
    dead_band: float = 1e-3  # fraction of S_max
    rel_step: float = 0.01  # FD step as a fraction of x_k
    fd_tolerance: float = 0.05  # allowed relative mismatch between step h and h/2
    fix_directions: bool = True
    monitor: bool = True
    beta: float = DEFAULT_BETA
    workers: int = 1

    def __post_init__(self):
        if self.top_n_vsr < 0 or self.top_n_pst < 0:
            raise ValueError("top-n must be non-negative")
        if self.threshold < 0:
            raise ValueError("monitoring threshold must be >= 0")
        if not 0 < self.rel_step < 1:
            raise ValueError("finite-difference step must lie in (0, 1)")
        if self.dead_band < 0:
            raise ValueError("dead-band must be >= 0")


def _natural_key(bid: str):
    return tuple((0, int(p), "") if p.isdigit() else (1, 0, p)
                 for p in re.split(r"(\d+)", str(bid)) if p)


def _cost(case: NetworkCase, scenario: ScenarioData, beta: float) -> float:
    return float(solve_market(build_dcopf(case, scenario, BTHETA, shedding=True, beta=beta)).objective)


@dataclass(frozen=True)
class Sensitivity:
    eta: float  # step h
    eta_half: float  # step h/2
    consistent: bool


def reactance_sensitivity(case: NetworkCase, scenario: ScenarioData,
                          branches: Sequence[str] | None = None, rel_step: float = 0.01,
                          beta: float = DEFAULT_BETA,
                          fd_tolerance: float = 0.05) -> dict[str, Sensitivity]:
    """d(optimal cost $/h)/d(x_k) for each branch, central differences at h and h/2."""
    ids = [k.id for k in case.branches] if branches is None else [str(b) for b in branches]
    xs = dict(zip((k.id for k in case.branches), case.x))
    out = {}
    for kid in ids:
        xk = xs[kid]

        def central(h):
            up = _cost(case.with_reactance(kid, xk + h), scenario, beta)
            dn = _cost(case.with_reactance(kid, xk - h), scenario, beta)
            return (up - dn) / (2 * h)

        h = rel_step * xk
        e1, e2 = central(h), central(h / 2)
        scale = max(abs(e1), abs(e2))
        # near-zero sensitivities are judged on the cost scale, not their own
        floor = 1e-6 * max(1.0, _cost(case, scenario, beta)) / h
        ok = abs(e1 - e2) <= fd_tolerance * scale + floor
        if not ok:
            logger.warning("FD sensitivity of branch %s unstable: %.6g (h) vs %.6g (h/2)",
                           kid, e1, e2)
        out[kid] = Sensitivity(float(e1), float(e2), bool(ok))
    return out


def weighted_sensitivity(eta: Mapping[str, Sequence[float]], hours: Sequence[float],
                         case: NetworkCase) -> dict[str, float]:
    xs = dict(zip((k.id for k in case.branches), case.x))
    n = np.asarray(hours, dtype=float)
    return {k: float(np.sum(n * np.abs(np.asarray(v, dtype=float) * xs[k]))) for k, v in eta.items()}


def weighted_rank(eta_bar: Mapping[str, float], top_n: int | None = 10) -> list[tuple[str, float]]:
    """Descending by weighted sensitivity; equal values keep branch-id order."""
    ranked = sorted(eta_bar.items(), key=lambda kv: (-kv[1], _natural_key(kv[0])))
    return ranked if top_n is None else ranked[:top_n]


def devices_off_flows(case: NetworkCase, scenarios: Sequence[ScenarioData],
                      beta: float = DEFAULT_BETA, workers: int = 1) -> np.ndarray:
    """Flows (branches x scenarios, MW) of the devices-off DCOPF with shedding."""
    def one(s):
        o = solve_market(build_dcopf(case, s, BTHETA, shedding=True, beta=beta))
        return [o.flows[k.id] for k in case.branches]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cols = list(pool.map(one, scenarios))
    else:
        cols = [one(s) for s in scenarios]
    return np.array(cols, dtype=float).T.reshape(case.n_branch, len(scenarios))


def direction_verdicts(case: NetworkCase, flows: np.ndarray, candidates: Sequence[str],
                       dead_band: float = 1e-3) -> dict[str, str]:
    smax = dict(zip((k.id for k in case.branches), case.s_max))
    out = {}
    for kid in candidates:
        row = flows[case.branch_index[str(kid)]]
        band = dead_band * smax[str(kid)]
        if np.all(row > band):
            out[str(kid)] = POSITIVE
        elif np.all(row < -band):
            out[str(kid)] = NEGATIVE
        else:
            out[str(kid)] = FREE
    return out


def fix_flow_directions(case: NetworkCase, scenarios: Sequence[ScenarioData],
                        candidates: Sequence[str], dead_band: float = 1e-3,
                        beta: float = DEFAULT_BETA) -> dict[str, str]:
    return direction_verdicts(case, devices_off_flows(case, scenarios, beta), candidates, dead_band)


def max_loading(case: NetworkCase, flows: np.ndarray) -> dict[str, float]:
    frac = np.abs(flows) / case.s_max[:, None] if flows.size else np.zeros((case.n_branch, 1))
    return {k.id: float(frac[i].max()) for i, k in enumerate(case.branches)}


def monitored_from_loading(case: NetworkCase, loading: Mapping[str, float],
                           candidates: Sequence[str], threshold: float = 0.6) -> tuple[str, ...]:
    """Candidates, lines at or above ``threshold`` and lines that were ever binding."""
    cand = {str(c) for c in candidates}
    return tuple(k.id for k in case.branches
                 if k.id in cand or loading[k.id] >= threshold
                 or loading[k.id] >= 1.0 - BINDING_TOL)


def select_monitored_lines(case: NetworkCase, scenarios: Sequence[ScenarioData],
                           threshold: float = 0.6, candidates: Sequence[str] = (),
                           beta: float = DEFAULT_BETA) -> tuple[str, ...]:
    loading = max_loading(case, devices_off_flows(case, scenarios, beta))
    return monitored_from_loading(case, loading, candidates, threshold)


def lower_level_binaries(directions: Mapping[str, str], n_scenarios: int) -> tuple[int, int]:
    """(direction binaries before fixing, after fixing) summed over scenarios."""
    free = sum(1 for v in directions.values() if v == FREE)
    return len(directions) * n_scenarios, free * n_scenarios


@dataclass
class ScreeningReport:
    branch_ids: tuple[str, ...]
    scenario_ids: tuple[int, ...]
    eta: np.ndarray  # branches x scenarios, $/h per p.u. reactance
    eta_bar: dict[str, float]
    vsr_candidates: list[str]
    pst_candidates: list[str]
    directions: dict[str, str]
    monitored: tuple[str, ...]
    loading: dict[str, float]
    unstable: list[str] = field(default_factory=list)

    @property
    def ranking(self) -> list[tuple[str, float]]:
        return weighted_rank(self.eta_bar, None)

    def to_text(self) -> str:
        lines = ["# weighted reactance sensitivity", f"{'rank':>4}  {'branch':<10} {'eta_bar ($)':>16}"]
        for i, (k, v) in enumerate(self.ranking, start=1):
            lines.append(f"{i:>4}  {k:<10} {v:>16.4f}")
        lines += ["", "# candidates", "vsr: " + " ".join(self.vsr_candidates),
                  "pst: " + " ".join(self.pst_candidates), "", "# flow-direction verdicts"]
        lines += [f"{k:<10} {v}" for k, v in self.directions.items()]
        lines += ["", f"# monitored lines ({len(self.monitored)} of {len(self.branch_ids)})",
                  f"{'branch':<10} {'max loading':>12}"]
        lines += [f"{k:<10} {self.loading[k]:>12.4f}" for k in self.monitored]
        if self.unstable:
            lines += ["", "# unstable finite differences: " + " ".join(self.unstable)]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())


def screen(case: NetworkCase, scenarios: Sequence[ScenarioData],
           config: ScreeningConfig | None = None,
           pinned_vsr: Sequence[str] | None = None,
           pinned_pst: Sequence[str] | None = None) -> ScreeningReport:
    """Rank candidates, fix flow directions and pick the monitored lines.

    Pinned candidate lists bypass the ranking; with both lists pinned the
    sensitivities are not computed.  VSR and PST lists come from the same
    ranking.
    """
    cfg = config or ScreeningConfig()
    ids = tuple(k.id for k in case.branches)

    def sens(s):
        return reactance_sensitivity(case, s, ids, cfg.rel_step, cfg.beta, cfg.fd_tolerance)

    if pinned_vsr is not None and pinned_pst is not None:
        # nothing to rank; skip the finite-difference sweep
        per_scen = [{k: Sensitivity(0.0, 0.0, True) for k in ids} for _ in scenarios]
    elif cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            per_scen = list(pool.map(sens, scenarios))
    else:
        per_scen = [sens(s) for s in scenarios]
    eta = np.array([[ps[k].eta for ps in per_scen] for k in ids]).reshape(len(ids), len(scenarios))
    unstable = sorted({k for ps in per_scen for k, v in ps.items() if not v.consistent},
                      key=_natural_key)
    eta_bar = weighted_sensitivity(dict(zip(ids, eta)), [s.hours for s in scenarios], case)
    ranked = [k for k, _ in weighted_rank(eta_bar, None)]
    vsr = [str(b) for b in pinned_vsr] if pinned_vsr is not None else ranked[:cfg.top_n_vsr]
    pst = [str(b) for b in pinned_pst] if pinned_pst is not None else ranked[:cfg.top_n_pst]

    flows = devices_off_flows(case, scenarios, cfg.beta, cfg.workers)
    if cfg.fix_directions:
        directions = direction_verdicts(case, flows, vsr, cfg.dead_band)
    else:
        directions = {k: FREE for k in vsr}
    loading = max_loading(case, flows)
    candidates = list(dict.fromkeys(vsr + pst))
    monitored = (monitored_from_loading(case, loading, candidates, cfg.threshold)
                 if cfg.monitor else ids)
    return ScreeningReport(ids, tuple(s.id for s in scenarios), eta, eta_bar, vsr, pst,
                           directions, monitored, loading, unstable)
