"""Command-line entry point: ``stldrive run <scenario.json> [options]``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .harness import run
from .scenario import ScenarioError, load_scenario

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_COLLISION = 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stldrive", description="Two-level STL/MIQP driving controller")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario in closed loop")
    r.add_argument("scenario", help="scenario JSON file or bundled scenario name")
    r.add_argument("--seed", type=int, default=None, help="sampling seed (default: scenario seed)")
    r.add_argument("--out", default=None, help="directory for trace.csv, timing.csv, summary.json")
    r.add_argument("--no-monitor", action="store_true", help="apply the planner output directly")
    r.add_argument("--horizon", type=int, default=None, help="override the MPC horizon H")
    r.add_argument("--max-steps", type=int, default=None, help="override the step limit")
    r.add_argument("--realtime", action="store_true",
                   help="also stop each MIQP at its wall-clock budget (not reproducible)")
    return p


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("STLDRIVE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")
    log = logging.getLogger("stldrive")
    args = _parser().parse_args(argv)
    try:
        if args.horizon is not None and args.horizon < 1:
            raise ScenarioError("--horizon must be >= 1")
        if args.max_steps is not None and args.max_steps < 1:
            raise ScenarioError("--max-steps must be >= 1")
        scenario = load_scenario(args.scenario)
        _, summary = run(scenario, seed=args.seed, monitor=False if args.no_monitor else None,
                         horizon=args.horizon, max_steps=args.max_steps, realtime=args.realtime,
                         out_dir=args.out)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"{summary.scenario}: {summary.steps} steps, {summary.termination}, "
          f"max tracking error {summary.max_tracking_error:.3f} m, min gap {summary.min_distance:.2f} m, "
          f"median fps {summary.fps_median:.0f}, collision {summary.collision}")
    return EXIT_COLLISION if summary.collision else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
