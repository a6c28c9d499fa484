"""Plot a run directory written by ``stldrive run --out``: path and ego
trajectory, speed over time colored by the applied input's source.

    python scripts/plot_trace.py runs/traffic_rules --scenario traffic_rules
"""
from __future__ import annotations

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from stldrive.harness import read_trace  # noqa: E402
from stldrive.scenario import load_scenario  # noqa: E402


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("run_dir", type=Path)
    ap.add_argument("--scenario", help="scenario file or bundled name, to draw the path and zones")
    ap.add_argument("--out", type=Path, default=None, help="image file (default: <run_dir>/trace.png)")
    args = ap.parse_args()

    rows = read_trace(args.run_dir / "trace.csv")
    t = np.array([float(r["t"]) for r in rows])
    x = np.array([float(r["x"]) for r in rows])
    y = np.array([float(r["y"]) for r in rows])
    v = np.array([float(r["speed"]) for r in rows])
    kind = np.array([r["source"].split("(")[0] for r in rows])

    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(9, 8))
    if args.scenario:
        sc = load_scenario(args.scenario)
        ax0.plot(sc.path.points[:, 0], sc.path.points[:, 1], "k--", lw=0.8, label="reference")
        for f in sc.features:
            z = f.zone
            ax0.add_patch(plt.Rectangle((z.x_min, z.y_min), z.x_max - z.x_min, z.y_max - z.y_min,
                                        alpha=0.15, label=f.kind))
        for veh in sc.vehicles:
            ax0.plot(veh.state.x, veh.state.y, "s", color="gray", ms=3)
    ax0.plot(x, y, lw=1.5, label="ego")
    ax0.set_aspect("equal", adjustable="datalim")
    ax0.legend(loc="best", fontsize=8)
    ax0.set_xlabel("x [m]")
    ax0.set_ylabel("y [m]")
    ax1.plot(t, v, color="0.6", lw=0.8)
    for k in np.unique(kind):
        m = kind == k
        ax1.plot(t[m], v[m], ".", ms=3, label=k)
    ax1.set_xlabel("t [s]")
    ax1.set_ylabel("speed [m/s]")
    ax1.legend(fontsize=8)
    out = args.out or args.run_dir / "trace.png"
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print("wrote", out)


if __name__ == "__main__":
    main()
