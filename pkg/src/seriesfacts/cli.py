"""Command-line entry point: ``seriesfacts {plan,dcopf,screen,import-case}``.

Exit codes: 0 success, 2 configuration or input error, 3 solver error,
4 decomposition stopped before closing the gap.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, PRESETS, RunConfig, load_config, parse_overrides
from .milp_core import SolverError
from .network import import_matpower
from .pipeline import (StageError, format_report, load_inputs, run_dcopf, run_plan,
                       write_plan_outputs)
from .screening import screen

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_GAP = 0, 2, 3, 4

logger = logging.getLogger("seriesfacts")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="YAML run configuration")
    p.add_argument("--preset", choices=sorted(PRESETS), help="computational case C1-C4")
    p.add_argument("--case", help="network case file (sets paths.case)")
    p.add_argument("--instance", help="planning instance file (sets paths.instance)")
    p.add_argument("--scenarios", help="scenario table CSV (sets paths.scenario_table)")
    p.add_argument("--profiles", help="hourly profile CSV to cluster (sets paths.profiles)")
    p.add_argument("--out", "-o", help="output directory (sets paths.output_dir)")
    p.add_argument("--set", "-s", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set algorithm.epsilon=1e-4")
    p.add_argument("--verbose", "-v", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seriesfacts",
                                     description="Bilevel VSR/PST placement for wind integration")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("plan", help="screen, assemble and solve the placement problem")
    _common(p)
    p = sub.add_parser("dcopf", help="solve one devices-off market snapshot")
    _common(p)
    p.add_argument("--scenario-id", type=int, required=True)
    p.add_argument("--formulation", choices=["shift-factor", "btheta"])
    p = sub.add_parser("screen", help="rank candidates, fix directions, pick monitored lines")
    _common(p)
    p = sub.add_parser("import-case", help="convert a MATPOWER case file to the native schema")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--default-s-max", type=float, default=9900.0,
                   help="MW limit for branches with RATE_A = 0")
    p.add_argument("--verbose", "-v", action="store_true")
    return parser


def _config(args) -> RunConfig:
    overrides = parse_overrides(args.set)
    for flag, key in (("case", "paths.case"), ("instance", "paths.instance"),
                      ("scenarios", "paths.scenario_table"), ("profiles", "paths.profiles"),
                      ("out", "paths.output_dir"), ("formulation", "formulation")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.setdefault(key, value)
    return load_config(args.config, overrides, args.preset)


def cmd_plan(args) -> int:
    cfg = _config(args)
    run = run_plan(cfg)
    files = write_plan_outputs(run, cfg, cfg.paths.output_dir)
    print(format_report(run, cfg), end="")
    print(f"# outputs written to {files['report.txt'].parent}")
    if run.report.status != "converged":
        print(f"gap not closed: {run.report.gap:.4g} > {cfg.algorithm.epsilon:g}", file=sys.stderr)
        return EXIT_GAP
    return EXIT_OK


def cmd_dcopf(args) -> int:
    cfg = _config(args)
    doc = run_dcopf(cfg, args.scenario_id)
    out = Path(cfg.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"dcopf_s{args.scenario_id}_{cfg.formulation}.json"
    path.write_text(json.dumps(doc, indent=2))
    print(f"scenario {doc['scenario']} ({doc['formulation']}): {doc['status']}, "
          f"cost {doc['objective']:.4f} $/h -> {path}")
    return EXIT_OK


def cmd_screen(args) -> int:
    cfg = _config(args)
    inputs = load_inputs(cfg)
    data = inputs.scenarios.materialize(inputs.case)
    rep = screen(inputs.case, data, cfg.screening_config(), cfg.vsr.candidates,
                 cfg.pst.candidates)
    out = Path(cfg.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep.write(out / "screening.txt")
    print(rep.to_text(), end="")
    return EXIT_OK


def cmd_import_case(args) -> int:
    case = import_matpower(args.source, args.default_s_max)
    case.dump(args.target)
    print(f"{case.name}: {case.n_bus} buses, {case.n_branch} branches, "
          f"{len(case.generators)} generators -> {args.target}")
    return EXIT_OK


COMMANDS = {"plan": cmd_plan, "dcopf": cmd_dcopf, "screen": cmd_screen,
            "import-case": cmd_import_case}


def _exit_code(exc: BaseException) -> int:
    root = exc.error if isinstance(exc, StageError) else exc
    if isinstance(root, SolverError):
        return EXIT_SOLVER
    return EXIT_CONFIG


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, StageError, SolverError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
