"""Regenerate the bundled scenario files under src/stldrive/scenarios."""
from __future__ import annotations

import argparse
import math
from pathlib import Path

from stldrive.scenario import save_scenario, scenario_from_dict

OUT = Path(__file__).resolve().parents[1] / "src" / "stldrive" / "scenarios"


def comparison() -> dict:
    # curved road, two speed zones (30 and 20 km/h)
    return {
        "name": "comparison",
        "path": {"start": [0.0, 0.0], "heading": 0.0, "spacing": 0.1,
                 "segments": [{"type": "straight", "length": 40.0},
                              {"type": "arc", "radius": 40.0, "angle": 1.2},
                              {"type": "straight", "length": 30.0},
                              {"type": "arc", "radius": 30.0, "angle": -1.0},
                              {"type": "straight", "length": 40.0}]},
        "ego": {"x": 0.0, "y": 0.0, "psi": 0.0, "v": 8.0},
        "features": [
            {"kind": "speed_limit", "zone": [45.0, 80.0, 0.0, 40.0], "v_max": 8.33},
            {"kind": "speed_limit", "zone": [60.0, 112.0, 50.0, 90.0], "v_max": 5.56},
        ],
        "v_cruise": 11.0,
        "max_steps": 400,
    }


def traffic_rules() -> dict:
    # stop sign at x = 40, traffic light at x = 110 (red from 12 s to 42 s)
    return {
        "name": "traffic_rules",
        "path": {"start": [0.0, 0.0], "heading": 0.0, "spacing": 0.5,
                 "segments": [{"type": "straight", "length": 150.0}]},
        "ego": {"x": 0.0, "y": 0.0, "psi": 0.0, "v": 5.0},
        "features": [
            {"kind": "stop_sign", "zone": [28.0, 40.0, -3.0, 3.0], "stop_line": [40.0, 0.0]},
            {"kind": "traffic_light", "zone": [90.0, 110.0, -3.0, 3.0], "stop_line": [110.0, 0.0],
             "phases": [["green", 12.0], ["red", 30.0], ["green", 200.0]], "stop_offset": 3.5},
        ],
        "v_cruise": 5.0,
        "max_steps": 600,
    }


def _lane_traffic(lanes, per_lane, spacing, speed, first_id=1, x0=-20.0):
    out = []
    vid = first_id
    for y in lanes:
        heading = 0.0 if y > 0 else math.pi
        for j in range(per_lane):
            x = x0 + spacing * j if y > 0 else x0 + spacing * (per_lane - 1 - j) + spacing / 2
            out.append({"id": vid, "state": [x, y, heading, speed], "behavior": "constant_velocity"})
            vid += 1
    return out


def safety(name="safety", planner=None) -> dict:
    # eight lanes of traffic around the ego lane plus a stopped car ahead of the ego
    lanes = [-14.0, -10.5, -7.0, -3.5, 3.5, 7.0, 10.5, 14.0]
    vehicles = [{"id": 0, "state": [70.0, 0.0, 0.0, 0.0], "behavior": "stationary"}]
    vehicles += _lane_traffic(lanes, 20, 12.0, 7.0)[:159]
    d = {
        "name": name,
        "path": {"start": [0.0, 0.0], "heading": 0.0, "spacing": 0.5,
                 "segments": [{"type": "straight", "length": 150.0}]},
        "ego": {"x": 0.0, "y": 0.0, "psi": 0.0, "v": 7.0},
        "vehicles": vehicles,
        "v_cruise": 7.0,
        "max_steps": 150,
    }
    if planner:
        d["planner_params"] = planner
    return d


def scalability() -> dict:
    # 11 x 11 grid; r_near = 40 m sees about 18 vehicles at a time
    vehicles = []
    vid = 0
    for i in range(11):
        y = 9.0 * (i - 5) + 4.5
        for j in range(11):
            vehicles.append({"id": vid, "state": [30.0 * (j - 3), y, 0.0, 6.0], "behavior": "constant_velocity"})
            vid += 1
    return {
        "name": "scalability",
        "path": {"start": [0.0, 0.0], "heading": 0.0, "spacing": 0.5,
                 "segments": [{"type": "straight", "length": 200.0}]},
        "ego": {"x": 0.0, "y": 0.0, "psi": 0.0, "v": 8.0},
        "vehicles": vehicles,
        "controller": {"r_near": 40.0},
        "v_cruise": 8.0,
        "max_steps": 200,
    }


def all_scenarios() -> list[dict]:
    return [comparison(), traffic_rules(), safety(),
            safety("safety_mismatch", {"b_max": 8.0 * 1.3}), scalability()]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for d in all_scenarios():
        sc = scenario_from_dict(d)
        save_scenario(sc, args.out / f"{sc.name}.json")
        print("wrote", args.out / f"{sc.name}.json")


if __name__ == "__main__":
    main()
