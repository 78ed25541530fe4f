"""Sweep device budgets and print one results row per (N_V, N_P) pair.

    python3 scripts/budget_sweep.py --instance desk6 --max-budget 2
    python3 scripts/budget_sweep.py --config run.yaml --preset C1
"""
import argparse
import dataclasses
from importlib import resources

from seriesfacts.config import load_config, parse_overrides
from seriesfacts.pipeline import format_table, load_inputs, run_plan


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--instance", default="desk6",
                    help="bundled instance name or path to an instance file")
    ap.add_argument("--preset", choices=["C1", "C2", "C3", "C4"])
    ap.add_argument("--max-budget", type=int, default=2)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    overrides = parse_overrides(args.set)
    if not args.config:
        path = args.instance
        if not path.endswith((".yaml", ".yml")):
            path = str(resources.files("seriesfacts") / "data" / "desk" / f"{path}.yaml")
        overrides["paths.instance"] = path
    cfg = load_config(args.config, overrides, args.preset)
    inputs = load_inputs(cfg)

    rows = []
    for nv in range(args.max_budget + 1):
        for npst in range(args.max_budget + 1):
            run = run_plan(cfg, dataclasses.replace(inputs, n_vsr=nv, n_pst=npst))
            rows.append((nv, npst, run.report))
            print(f"N_V={nv} N_P={npst}: {run.report.objective / 1e6:.4f} M$ "
                  f"({run.report.iterations} iterations, {run.report.wall_time:.2f} s)", flush=True)
    print()
    print(format_table(rows, inputs.case))


if __name__ == "__main__":
    main()
