"""Run every bundled scenario and print a one-line summary for each.

    python scripts/run_scenarios.py --out runs/
"""
from __future__ import annotations

import argparse
from pathlib import Path

from stldrive.harness import run
from stldrive.scenario import BUNDLED, load_scenario


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("runs"))
    ap.add_argument("names", nargs="*", default=list(BUNDLED))
    args = ap.parse_args()
    print(f"{'scenario':<24}{'steps':>6}  {'end':<10}{'max err':>8}{'min gap':>9}{'fps med':>9}  sources")
    for name in args.names:
        runs = [(name, None)]
        if name == "safety_mismatch":
            runs.append((name + "_no_monitor", False))
        for label, monitor in runs:
            _, s = run(load_scenario(name), monitor=monitor, out_dir=args.out / label)
            print(f"{label:<24}{s.steps:>6}  {s.termination:<10}{s.max_tracking_error:>8.3f}"
                  f"{s.min_distance:>9.2f}{s.fps_median:>9.0f}  {s.sources}")


if __name__ == "__main__":
    main()
