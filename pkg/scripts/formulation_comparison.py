"""Compare the C1-C4 model configurations on one instance: lower-level size and run time.

    python3 scripts/formulation_comparison.py --instance desk_d
"""
import argparse
from importlib import resources

from seriesfacts.config import PRESETS, load_config, parse_overrides
from seriesfacts.pipeline import load_inputs, run_plan


def lower_level_size(compact) -> dict[str, int]:
    size = {"variables": 0, "binaries": 0, "rows": 0}
    for blk in compact.blocks:
        size["variables"] += len(blk.y_names) + len(blk.z_names)
        size["binaries"] += len(blk.z_names)
        size["rows"] += blk.E.shape[0] + blk.P.shape[0]
    return size


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--instance", default="desk_d")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    overrides = parse_overrides(args.set)
    if not args.config:
        path = args.instance
        if not path.endswith((".yaml", ".yml")):
            path = str(resources.files("seriesfacts") / "data" / "desk" / f"{path}.yaml")
        overrides["paths.instance"] = path

    head = f"{'preset':<7}{'formulation':<14}{'fixed':>6}{'monit.':>7}{'vars':>8}{'bin':>6}" \
           f"{'rows':>8}{'iter':>6}{'time s':>9}{'objective M$':>15}"
    print(head)
    print("-" * len(head))
    for name in sorted(PRESETS):
        cfg = load_config(args.config, overrides, name)
        run = run_plan(cfg, load_inputs(cfg))
        size = lower_level_size(run.compact)
        r = run.report
        print(f"{name:<7}{cfg.formulation:<14}{str(cfg.reduction.fix_directions):>6}"
              f"{len(run.compact.monitored):>7}{size['variables']:>8}{size['binaries']:>6}"
              f"{size['rows']:>8}{r.iterations:>6}{r.wall_time:>9.2f}{r.objective / 1e6:>15.4f}",
              flush=True)


if __name__ == "__main__":
    main()
