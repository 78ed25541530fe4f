"""End-to-end planning runs shared by the command line and the experiment scripts."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .bilevel import (CcgResult, CompactForm, PlanReport, assemble_compact, audit_all_lines,
                      report_from_ccg, run_ccg)
from .config import RunConfig
from .devices import build_catalog
from .instances import load_instance
from .market import build_dcopf, solve_market
from .network import NetworkCase, compute_ptdf, parse_case
from .scenarios import ScenarioSet, ingest_profiles, reference_table, read_scenario_table, reduce_profile
from .screening import ScreeningReport, lower_level_binaries, screen

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    """Wraps an upstream failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f"{stage}: {error}")
        self.stage = stage
        self.error = error


@dataclass
class PlanInputs:
    case: NetworkCase
    scenarios: ScenarioSet
    vsr: list[str] | None
    pst: list[str] | None
    n_vsr: int
    n_pst: int
    seed: int | None


@dataclass
class PlanRun:
    inputs: PlanInputs
    screening: ScreeningReport
    compact: CompactForm
    ccg: CcgResult
    report: PlanReport
    excluded_violations: list[dict]
    lower_level_binaries: tuple[int, int]


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # surfaced with its stage; the CLI maps the type to an exit code
        raise StageError(name, exc) from exc


def load_inputs(cfg: RunConfig) -> PlanInputs:
    p = cfg.paths
    explicit = getattr(cfg, "explicit", set())
    seed = None
    vsr = cfg.vsr.candidates
    pst = cfg.pst.candidates
    n_vsr, n_pst = cfg.budgets.vsr, cfg.budgets.pst
    if p.instance:
        inst = _stage("instance", load_instance, p.instance)
        case, scen = inst.case, inst.scenarios
        vsr = list(inst.vsr) if vsr is None else vsr
        pst = list(inst.pst) if pst is None else pst
        if "budgets.vsr" not in explicit:
            n_vsr = inst.n_vsr
        if "budgets.pst" not in explicit:
            n_pst = inst.n_pst
    else:
        if not p.case:
            raise StageError("config", ValueError("paths.case or paths.instance is required"))
        case = _stage("case", parse_case, p.case)
        scen = None
    if p.scenario_table:
        scen = _stage("scenarios", read_scenario_table, p.scenario_table)
    elif p.profiles:
        prof = _stage("scenarios", ingest_profiles, p.profiles, p.wind_profiles)
        seed = cfg.scenarios.seed
        scen = _stage("scenarios", reduce_profile, prof, cfg.scenarios.clusters, seed)
    elif scen is None:
        scen = reference_table()
    return PlanInputs(case, scen, vsr, pst, n_vsr, n_pst, seed)


def run_plan(cfg: RunConfig, inputs: PlanInputs | None = None, audit: bool = True) -> PlanRun:
    inputs = inputs or load_inputs(cfg)
    case = inputs.case
    data = _stage("scenarios", inputs.scenarios.materialize, case)
    rep = _stage("screening", screen, case, data, cfg.screening_config(), inputs.vsr, inputs.pst)
    catalog = _stage("devices", build_catalog, case, rep.vsr_candidates, rep.pst_candidates,
                     cfg.device_settings())
    monitored = rep.monitored if cfg.reduction.monitor_lines else None
    compact = _stage("assembly", assemble_compact, case, data, catalog, inputs.n_vsr,
                     inputs.n_pst, directions=rep.directions, monitored=monitored,
                     formulation=cfg.formulation, alpha_spill=cfg.economics.alpha,
                     beta=cfg.economics.beta)
    result = _stage("ccg", run_ccg, compact, cfg.ccg_config())
    report = _stage("report", report_from_ccg, compact, result, audit, inputs.seed)
    violations = audit_all_lines(compact, result.evaluation) if audit else []
    for v in violations:
        report.warnings.append(f"excluded line {v['branch']} loaded {v['loading']:.3f} in "
                               f"scenario {v['scenario']}")
    return PlanRun(inputs, rep, compact, result, report, violations,
                   lower_level_binaries(rep.directions, len(data)))


# -- output ------------------------------------------------------------------------

def _loc(case: NetworkCase, bid: str) -> str:
    br = case.branches[case.branch_index[bid]]
    return f"{bid}({br.from_bus}-{br.to_bus})"


def format_table(rows: Sequence[tuple[int, int, PlanReport]], case: NetworkCase) -> str:
    """Fixed-width results table, one row per budget pair; money in M$."""
    farms = [w.id for w in case.wind_farms]
    head = (["N_V", "N_P", "VSR locations", "PST locations", "Inv VSR", "Inv PST"]
            + [f"Curt {f} (MWh)" for f in farms]
            + ["Shed (MWh)", "Objective", "Penetration %"])
    body = []
    for nv, np_, r in rows:
        body.append([str(nv), str(np_), " ".join(_loc(case, b) for b in r.vsr_locations) or "-",
                     " ".join(_loc(case, b) for b in r.pst_locations) or "-",
                     f"{r.investment_vsr / 1e6:.4f}", f"{r.investment_pst / 1e6:.4f}"]
                    + [f"{r.curtailment_mwh[f]:.2f}" for f in farms]
                    + [f"{r.shedding_mwh:.2f}", f"{r.objective / 1e6:.4f}",
                       f"{r.wind_penetration:.4f}"])
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(head)]
    line = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    return "\n".join([line(head), line(["-" * w for w in widths])] + [line(b) for b in body])


def format_report(run: PlanRun, cfg: RunConfig) -> str:
    r, inp = run.report, run.inputs
    head = [
        f"# case={inp.case.name} scenarios={len(inp.scenarios)} hours={inp.scenarios.total_hours:g} "
        f"seed={inp.seed if inp.seed is not None else cfg.scenarios.seed} "
        f"formulation={cfg.formulation}",
        f"# status={r.status} iterations={r.iterations} gap={r.gap:.3e} "
        f"time={r.wall_time:.2f}s (MP {r.mp_time:.2f}s, SP {r.sp_time:.2f}s)",
        f"# lower-level direction binaries: {run.lower_level_binaries[0]} -> "
        f"{run.lower_level_binaries[1]}; monitored lines: {len(run.compact.monitored)} of "
        f"{inp.case.n_branch}",
        "# money in M$ per year",
        "",
        format_table([(inp.n_vsr, inp.n_pst, r)], inp.case),
    ]
    if r.warnings:
        head += ["", "# warnings"] + [f"- {w}" for w in r.warnings]
    return "\n".join(head) + "\n"


def write_plan_outputs(run: PlanRun, cfg: RunConfig, outdir) -> dict[str, Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    files = {name: out / name for name in
             ("report.txt", "report.json", "iterations.csv", "curtailment.csv", "screening.txt")}
    files["report.txt"].write_text(format_report(run, cfg))
    doc = {"case": run.inputs.case.name, "budgets": {"vsr": run.inputs.n_vsr, "pst": run.inputs.n_pst},
           "seed": run.inputs.seed if run.inputs.seed is not None else cfg.scenarios.seed,
           "report": run.report.to_dict(), "excluded_line_violations": run.excluded_violations,
           "config": cfg.to_dict()}
    files["report.json"].write_text(json.dumps(doc, indent=2, default=_json_default))
    with open(files["iterations.csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["q", "lb", "ub", "gap", "mp_seconds", "sp_seconds", "cuts_added"])
        for rec in run.ccg.state.log:
            w.writerow([rec.q, f"{rec.lb:.6f}", f"{rec.ub:.6f}", f"{rec.gap:.6e}",
                        f"{rec.mp_seconds:.4f}", f"{rec.sp_seconds:.4f}", rec.cuts_added])
    rows = run.report.scenario_curtailment
    with open(files["curtailment.csv"], "w", newline="") as fh:
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    run.screening.write(files["screening.txt"])
    return files


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (set, tuple)):
        return list(obj)
    raise TypeError(f"not serialisable: {type(obj)}")


def run_dcopf(cfg: RunConfig, scenario_id: int, inputs: PlanInputs | None = None) -> dict:
    inputs = inputs or load_inputs(cfg)
    scen = _stage("scenarios", inputs.scenarios.by_id, scenario_id)
    data = _stage("scenarios", lambda: inputs.scenarios.materialize(inputs.case))
    sd = next(d for d in data if d.id == scen.id)
    case = inputs.case
    ptdf = compute_ptdf(case) if cfg.formulation == "shift-factor" else None
    mm = _stage("market", build_dcopf, case, sd, cfg.formulation, ptdf, True, cfg.economics.beta)
    t0 = time.perf_counter()
    out = _stage("market", solve_market, mm)
    res = out.result
    return {
        "case": case.name, "scenario": scen.id, "formulation": cfg.formulation,
        "status": out.status, "objective": out.objective,
        "dispatch": dict(zip((g.id for g in case.generators), out.dispatch.tolist())),
        "wind": dict(zip((w.id for w in case.wind_farms), out.wind_used.tolist())),
        "spillage": dict(zip((w.id for w in case.wind_farms), out.spillage.tolist())),
        "shedding": dict(zip((d.id for d in case.loads), out.shedding.tolist())),
        "flows": out.flows,
        "duals": {"equalities": {n: res.dual(n) for n in res.eq_index},
                  "inequalities": {n: res.dual(n) for n in res.ineq_index}},
        "size": mm.size(), "seconds": time.perf_counter() - t0,
    }
