"""Closed-loop runs: tick the controller, step the world, log, summarize.

``trace.csv`` holds only quantities that are a deterministic function of the
scenario and seed, so reruns are byte-identical; wall-clock timings go to
``timing.csv``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .controller import TwoLevelController
from .environment import (SPEED_LIMIT, STOP_SIGN, TRAFFIC_LIGHT, FeatureTracker, aabb_gap,
                          aabb_intersects, tracking_error)
from .scenario import Scenario
from .world import World, step_world

log = logging.getLogger("stldrive")

GOAL_TOLERANCE = 2.0

TRACE_COLUMNS = ["step", "t", "x", "y", "psi", "v", "vx_body", "vy_body", "psi_dot",
                 "delta", "gamma", "source", "hl_status", "nodes", "binaries", "tracking_error",
                 "speed", "min_gap", "collision", "active_rules", "light_phases", "violations"]
TIMING_COLUMNS = ["step", "hl_solve_time", "ll_time"]


@dataclass
class StepRecord:
    step: int
    t: float
    x: float
    y: float
    psi: float
    v: float
    vx_body: float
    vy_body: float
    psi_dot: float
    delta: float
    gamma: float
    source: str
    hl_status: str
    nodes: int
    binaries: int
    tracking_error: float
    speed: float
    min_gap: float
    collision: bool
    active_rules: str
    light_phases: str
    violations: str
    hl_solve_time: float = 0.0
    ll_time: float = 0.0


@dataclass
class RunSummary:
    scenario: str
    steps: int
    termination: str
    max_tracking_error: float
    mean_tracking_error: float
    min_distance: float
    collision: bool
    fps_median: float
    fps_min: float
    violations: int
    sources: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = None
        return d


@dataclass
class TraceLog:
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def min_gap(world: World) -> tuple[float, bool]:
    """Smallest box-to-box distance from the ego to any vehicle, and whether
    any pair intersects."""
    if not world.vehicles:
        return math.inf, False
    ego = world.ego_box()
    best, hit = math.inf, False
    for v in world.vehicles:
        b = v.box()
        if aabb_intersects(ego, b):
            return 0.0, True
        best = min(best, aabb_gap(ego, b))
    return best, hit


def _violations(world: World, prev: World | None) -> list[str]:
    """Rules the ground-truth state breaks at this step."""
    out = []
    ego = world.ego
    for i, f in enumerate(world.features):
        if f.kind == SPEED_LIMIT and f.zone.contains(ego.x, ego.y) and ego.speed > f.v_max:
            out.append(f"speed_limit[{i}]")
    if prev is not None:
        s_prev = world.path.project(prev.ego.x, prev.ego.y)
        s_now = world.path.project(ego.x, ego.y)
        for i, s_line in world.tracker.s_line.items():
            if not s_prev <= s_line < s_now:
                continue
            f = world.features[i]
            if f.kind == TRAFFIC_LIGHT and f.light_color(prev.t) == "red":
                out.append(f"red_light[{i}]")
            if f.kind == STOP_SIGN and i not in prev.tracker.completed:
                out.append(f"stop_sign[{i}]")
    return out


def initial_world(scenario: Scenario) -> World:
    return World(0.0, 0, scenario.ego_detailed, tuple(scenario.vehicles), scenario.path,
                 tuple(scenario.features), FeatureTracker(scenario.features, scenario.path),
                 scenario.params, scenario.v_cruise)


def _fmt(x: float) -> str:
    return repr(float(x))


def run(scenario: Scenario, seed: int | None = None, monitor: bool | None = None, horizon: int | None = None,
        max_steps: int | None = None, realtime: bool = False, out_dir: str | Path | None = None
        ) -> tuple[TraceLog, RunSummary]:
    """Closed loop until the path end (within 2 m), a collision, or
    ``max_steps``.  With ``realtime`` the MIQP also stops at its wall-clock
    budget, which makes runs machine-dependent."""
    cfg = scenario.cfg
    if monitor is not None:
        cfg = replace(cfg, monitor=monitor)
    if horizon is not None:
        cfg = replace(cfg, h=horizon)
    steps = scenario.max_steps if max_steps is None else max_steps
    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    ctrl = TwoLevelController(cfg, scenario.params, scenario.planner_params, deterministic=not realtime)
    world = initial_world(scenario)
    goal = scenario.path.points[-1, :2]
    trace = TraceLog()
    termination = "max_steps"
    prev = None
    for k in range(steps):
        out = ctrl.tick(world, rng)
        gap, hit = min_gap(world)
        ego = world.ego
        d = out.diagnostics
        trace.records.append(StepRecord(
            k, world.t, ego.x, ego.y, ego.psi, ego.speed, ego.vx_body, ego.vy_body, ego.psi_dot,
            out.applied.delta, out.applied.gamma, str(out.source), d.hl_status, d.nodes, d.binaries,
            tracking_error(world.path, ego), ego.speed, gap, hit,
            ";".join(d.active_rules),
            ";".join(f"{i}:{c}" for i, c in sorted(world.light_phases().items())),
            ";".join(_violations(world, prev)), d.hl_solve_time, d.ll_time))
        log.debug("step %d t=%.1f v=%.2f src=%s", k, world.t, ego.speed, out.source)
        if hit:
            termination = "collision"
            break
        if math.hypot(ego.x - goal[0], ego.y - goal[1]) <= GOAL_TOLERANCE:
            termination = "goal"
            break
        prev = world
        world = step_world(world, out.applied, cfg.dt)
    summary = summarize(scenario.name, trace, termination)
    if out_dir is not None:
        write_outputs(trace, summary, out_dir)
    return trace, summary


def summarize(name: str, trace: TraceLog, termination: str) -> RunSummary:
    recs = trace.records
    errs = [r.tracking_error for r in recs]
    fps = [1.0 / max(r.hl_solve_time + r.ll_time, 1e-9) for r in recs]
    sources: dict[str, int] = {}
    for r in recs:
        kind = r.source.split("(")[0]
        sources[kind] = sources.get(kind, 0) + 1
    return RunSummary(
        scenario=name, steps=len(recs), termination=termination,
        max_tracking_error=max(errs, default=0.0),
        mean_tracking_error=statistics.fmean(errs) if errs else 0.0,
        min_distance=min((r.min_gap for r in recs), default=math.inf),
        collision=any(r.collision for r in recs),
        fps_median=statistics.median(fps) if fps else 0.0,
        fps_min=min(fps, default=0.0),
        violations=sum(1 for r in recs if r.violations),
        sources=sources)


def write_outputs(trace: TraceLog, summary: RunSummary, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in trace.records:
            row = []
            for c in TRACE_COLUMNS:
                val = getattr(r, c)
                row.append(_fmt(val) if isinstance(val, float) else int(val) if isinstance(val, bool) else val)
            w.writerow(row)
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMING_COLUMNS)
        for r in trace.records:
            w.writerow([r.step, _fmt(r.hl_solve_time), _fmt(r.ll_time)])
    (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=1) + "\n")


def read_trace(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
