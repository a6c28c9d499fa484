"""Two-level controller: an MIQP model-predictive planner on the kinematic
bicycle with STL rules as mixed-integer constraints, and a low level that
replays each plan on the four-wheel model, monitors the rules with bounding
boxes, and repairs failing plans by sampling or full braking.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from .environment import (SPEED_LIMIT, STOP_SIGN, TRAFFIC_LIGHT, FeatureTracker, ReferencePath,
                          RoadFeature, StopTarget, TrafficVehicle, Waypoint, aabb_of,
                          extract_desired_trajectory, nearby_vehicles, predict_trajectories)
from .milc import BIG_M, ConstraintSystem, encode_collision_1norm, impose
from .miqp import Status, solve_miqp
from .stl import (Always, ActiveRuleSet, Collision1Norm, Pred, And, collision_1norm_rule,
                  collision_aabb_rule, monitor_trace, red_light_rule, speed_limit_rule,
                  stop_sign_rule, verdict, EPS_STOP)
from .vehicle import (ControlInput, DetailedState, Model, SimpleState, VehicleParams, clamp_input,
                      linearize_simple, simulate_trajectory, wrap_angle)


@dataclass(frozen=True)
class MpcConfig:
    h: int = 10
    dt: float = 0.1
    r_near: float = 10.0
    d_safe: float = 1.0
    r_ball: float = 0.3
    n_samples: int = 30
    w_u: float = 1.0
    w_du: float = 1.0
    w_track: float = 1.0
    big_m: float = BIG_M
    # wall-clock budget per solve; ignored by deterministic harness runs
    qp_budget: float | None = 0.08
    max_nodes: int | None = 60
    mip_gap: float = 1e-3
    # (step, vehicle) clearance pairs further than d_safe + this from the
    # linearization nominal are left out of the MIQP
    prune_margin: float = 3.0
    monitor: bool = True

    def __post_init__(self):
        if self.h < 1:
            raise ValueError("MpcConfig.h must be >= 1")
        if self.n_samples < 1:
            raise ValueError("MpcConfig.n_samples must be >= 1")
        for name in ("dt", "r_near", "d_safe", "r_ball", "w_u", "w_du", "w_track", "big_m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"MpcConfig.{name} must be > 0, got {getattr(self, name)}")
        if self.qp_budget is not None and not self.qp_budget > 0:
            raise ValueError("MpcConfig.qp_budget must be > 0 or null")
        if self.max_nodes is not None and self.max_nodes < 1:
            raise ValueError("MpcConfig.max_nodes must be >= 1 or null")
        if self.prune_margin < 0:
            raise ValueError("MpcConfig.prune_margin must be >= 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MpcConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown controller field(s): {sorted(unknown)}")
        return cls(**d)


# distance before a red-light stop target at which the ego is made to hold
HOLD_DISTANCE = 0.5
V_HOLD = 0.005

OPTIMAL = "Optimal"
SAMPLED = "Sampled"
FULL_BRAKE = "FullBrake"
REUSED_PREVIOUS = "ReusedPrevious"


@dataclass(frozen=True)
class Source:
    kind: str
    tries: int = 0

    def __str__(self) -> str:
        return f"{SAMPLED}({self.tries})" if self.kind == SAMPLED else self.kind


@dataclass
class Diagnostics:
    hl_solve_time: float = 0.0
    ll_time: float = 0.0
    monitor_verdicts: dict[str, bool] = field(default_factory=dict)
    hl_status: str = ""
    nodes: int = 0
    binaries: int = 0
    active_rules: list[str] = field(default_factory=list)


@dataclass
class ControllerOutput:
    applied: ControlInput
    plan: list[ControlInput]
    source: Source
    diagnostics: Diagnostics = field(default_factory=Diagnostics)


@dataclass
class EnvSnapshot:
    """What the planner sees in one tick."""
    waypoints: list[Waypoint]
    predictions: dict[int, list[SimpleState]] = field(default_factory=dict)
    boxes: dict[int, tuple[float, float]] = field(default_factory=dict)


@dataclass
class PlanResult:
    plan: list[ControlInput]
    status: Status
    reused: bool
    solve_time: float
    nodes: int = 0
    binaries: int = 0


def shift_plan(plan: Sequence[ControlInput], h: int) -> list[ControlInput]:
    """Drop the first input and repeat the last one; zeros if there is no plan."""
    if not plan:
        return [ControlInput() for _ in range(h)]
    out = list(plan[1:]) + [plan[-1]]
    if len(out) < h:
        out += [out[-1]] * (h - len(out))
    return out[:h]


# ---------------------------------------------------------------- high level


def _unwrap_near(angle: float, ref: float) -> float:
    return ref + wrap_angle(angle - ref)


def high_level_step(state: SimpleState, prev_plan: Sequence[ControlInput] | None, snapshot: EnvSnapshot,
                    rules: ActiveRuleSet, cfg: MpcConfig, params: VehicleParams,
                    u_prev: ControlInput | None = None, deterministic: bool = False) -> PlanResult:
    """Solve the MPC problem once.

    Decision variables are the states at steps 0..H (step 0 pinned to
    ``state``) and per step the steering angle and the throttle command,
    split into nonnegative throttle and brake parts so the speed row stays
    exactly linear.  Position and heading rows are linearized around the
    previous plan shifted by one step.
    """
    t0 = time.perf_counter()
    h, dt = cfg.h, cfg.dt
    if len(snapshot.waypoints) < h + 1:
        raise ValueError(f"snapshot needs {h + 1} waypoints, got {len(snapshot.waypoints)}")
    nominal_u = [clamp_input(u, params) for u in shift_plan(prev_plan or [], h)]
    nominal = simulate_trajectory(state, nominal_u, dt, params, wrap=False)
    u_prev = u_prev if u_prev is not None else (prev_plan[0] if prev_plan else ControlInput())

    sys = ConstraintSystem()
    xs = []
    for k in range(h + 1):
        idx = [sys.add_var(f"{c}[{k}]") for c in ("x", "y", "psi")]
        idx.append(sys.add_var(f"v[{k}]", lo=0.0))
        xs.append(idx)
    for j, val in enumerate(state.as_array()):
        sys.fix(xs[0][j], val)
    us = []
    for k in range(h):
        d = sys.add_var(f"delta[{k}]", params.delta_min, params.delta_max)
        g = sys.add_var(f"gamma[{k}]", -1.0, 1.0)
        gp = sys.add_var(f"gamma_p[{k}]", 0.0, 1.0)
        gm = sys.add_var(f"gamma_m[{k}]", 0.0, 1.0)
        sys.add_constraint({g: 1.0, gp: -1.0, gm: 1.0}, "==", 0.0)
        us.append((d, g, gp, gm))

    for k in range(h):
        lin = linearize_simple(nominal[k], nominal_u[k], dt, params, wrap=False)
        d, g, gp, gm = us[k]
        for r in range(3):
            coeffs = {xs[k + 1][r]: 1.0}
            for j in range(4):
                if lin.a_mat[r, j] != 0.0:
                    coeffs[xs[k][j]] = coeffs.get(xs[k][j], 0.0) - lin.a_mat[r, j]
            if lin.b_mat[r, 0] != 0.0:
                coeffs[d] = -lin.b_mat[r, 0]
            sys.add_constraint(coeffs, "==", float(lin.c_vec[r]))
        sys.add_constraint({xs[k + 1][3]: 1.0, xs[k][3]: -1.0, gp: -dt * params.a_max,
                            gm: dt * params.b_max}, "==", 0.0)

    # cost
    for k in range(h):
        d, g, gp, gm = us[k]
        for var in (d, gp, gm):
            sys.add_square({var: 1.0}, 0.0, cfg.w_u)
        if k == 0:
            sys.add_square({d: 1.0}, u_prev.delta, cfg.w_du)
            sys.add_square({g: 1.0}, u_prev.gamma, cfg.w_du)
        else:
            dp, g_p = us[k - 1][0], us[k - 1][1]
            sys.add_square({d: 1.0, dp: -1.0}, 0.0, cfg.w_du)
            sys.add_square({g: 1.0, g_p: -1.0}, 0.0, cfg.w_du)
    for k in range(1, h + 1):
        wp = snapshot.waypoints[k]
        psi_des = _unwrap_near(wp.psi_des, nominal[k].psi)
        for j, target in enumerate((wp.x_des, wp.y_des, psi_des, wp.v_des)):
            sys.add_square({xs[k][j]: 1.0}, target, cfg.w_track)

    for name, formula in rules.rules:
        _impose_rule(sys, formula, xs, nominal, cfg)

    warm = np.zeros(sys.num_vars)
    for k in range(h + 1):
        warm[xs[k]] = nominal[k].as_array()
    for k in range(h):
        d, g, gp, gm = us[k]
        warm[d], warm[g] = nominal_u[k].delta, nominal_u[k].gamma
        warm[gp], warm[gm] = max(nominal_u[k].gamma, 0.0), max(-nominal_u[k].gamma, 0.0)

    budget = None if deterministic else cfg.qp_budget
    sol = solve_miqp(sys, budget=budget, max_nodes=cfg.max_nodes, warm_start=warm,
                     gap_rel=cfg.mip_gap, gap_abs=1e-6)
    elapsed = time.perf_counter() - t0
    if sol.x is None:
        return PlanResult(shift_plan(prev_plan or [], h), sol.status, True, elapsed,
                          sol.nodes_explored, len(sys.binaries))
    plan = [clamp_input(ControlInput(float(sol.x[d]), _command(sol.x[gp], sol.x[gm], params)), params)
            for d, g, gp, gm in us]
    return PlanResult(plan, sol.status, False, elapsed, sol.nodes_explored, len(sys.binaries))


def _command(gp: float, gm: float, params: VehicleParams) -> float:
    """Single throttle/brake command realizing the planned acceleration.

    Throttle and brake may both be nonzero in the solution (the slopes
    differ, so that can be cheaper than one of them alone); the speed row is
    exact in the acceleration, not in gamma_p - gamma_m.
    """
    accel = params.a_max * float(gp) - params.b_max * float(gm)
    return accel / params.a_max if accel >= 0.0 else accel / params.b_max


def _impose_rule(sys: ConstraintSystem, formula, xs, nominal, cfg: MpcConfig) -> None:
    """Pin a rule true.  Clearance rules get per-step pruning against the
    nominal trajectory; everything else goes through the generic encoder."""
    if isinstance(formula, Always) and isinstance(formula.child, And) and formula.child.children and \
            all(isinstance(c, Pred) and isinstance(c.predicate, Collision1Norm) for c in formula.child.children):
        reach = cfg.d_safe + cfg.prune_margin
        for c in formula.child.children:
            p = c.predicate
            steps = [k for k in range(formula.a, min(formula.b, len(xs) - 1) + 1)
                     if abs(nominal[k].x - p.other[min(k, len(p.other) - 1)][0])
                     + abs(nominal[k].y - p.other[min(k, len(p.other) - 1)][1]) < reach]
            if steps:
                other = [p.other[min(k, len(p.other) - 1)] for k in range(len(xs))]
                encode_collision_1norm(sys, [(x[0], x[1]) for x in xs], other, p.d_safe, steps,
                                       cfg.big_m, pinned=True)
        return
    impose(formula, sys, xs, big_m=cfg.big_m)


# ---------------------------------------------------------------- low level


def _rollout(state: DetailedState, plan: Sequence[ControlInput], cfg: MpcConfig,
             params: VehicleParams) -> np.ndarray:
    states = simulate_trajectory(state, plan, cfg.dt, params, model=Model.DETAILED)
    return np.array([s.to_simple().as_array() for s in states])


def sample_ball(rng: np.random.Generator, r: float) -> tuple[float, float]:
    """Uniform point in the 2-D disc of radius ``r``."""
    rho = r * math.sqrt(rng.random())
    theta = 2.0 * math.pi * rng.random()
    return rho * math.cos(theta), rho * math.sin(theta)


def perturb(u: ControlInput, offset: tuple[float, float], params: VehicleParams) -> ControlInput:
    """Shift ``u`` by an offset given in normalized (delta / delta_max, gamma) units."""
    return clamp_input(ControlInput(u.delta + offset[0] * params.delta_max, u.gamma + offset[1]), params)


def low_level_step(state: DetailedState, plan: Sequence[ControlInput], rules: ActiveRuleSet,
                   cfg: MpcConfig, params: VehicleParams, rng: np.random.Generator,
                   reused: bool = False) -> ControllerOutput:
    """Replay ``plan`` on the detailed model and keep it if every rule holds;
    otherwise try r-ball perturbations of the first input, then full braking."""
    t0 = time.perf_counter()
    plan = list(plan)
    if len(plan) != cfg.h:
        raise ValueError(f"plan length {len(plan)} != horizon {cfg.h}")
    verdicts = monitor_trace(rules, _rollout(state, plan, cfg, params))
    if verdict(verdicts):
        src = Source(REUSED_PREVIOUS if reused else OPTIMAL)
        return ControllerOutput(plan[0], plan, src, Diagnostics(ll_time=time.perf_counter() - t0,
                                                                monitor_verdicts=verdicts))
    for k in range(1, cfg.n_samples + 1):
        cand = [perturb(plan[0], sample_ball(rng, cfg.r_ball), params)] + plan[1:]
        if verdict(monitor_trace(rules, _rollout(state, cand, cfg, params))):
            return ControllerOutput(cand[0], cand, Source(SAMPLED, k),
                                    Diagnostics(ll_time=time.perf_counter() - t0, monitor_verdicts=verdicts))
    brake = ControlInput(plan[0].delta, -1.0)
    return ControllerOutput(brake, plan, Source(FULL_BRAKE),
                            Diagnostics(ll_time=time.perf_counter() - t0, monitor_verdicts=verdicts))


# ---------------------------------------------------------------- rule assembly


@dataclass
class RuleBundle:
    high: ActiveRuleSet
    low: ActiveRuleSet
    snapshot: EnvSnapshot
    names: list[str]


def assemble_rules(ego: SimpleState, t: float, path: ReferencePath, features: Sequence[RoadFeature],
                   tracker: FeatureTracker, vehicles: Sequence[TrafficVehicle], cfg: MpcConfig,
                   params: VehicleParams, v_cruise: float, step: int = 0,
                   deadlines: dict[int, int] | None = None) -> RuleBundle:
    """Active rules for this tick, as 1-norm (planner) and box (monitor) variants.

    A stop sign's eventually-window is anchored at the tick it first became
    active (kept in ``deadlines``, feature -> absolute step) so the receding
    horizon cannot postpone the stop forever.
    """
    deadlines = {} if deadlines is None else deadlines
    h = cfg.h
    s_ego = path.project(ego.x, ego.y)
    stops: list[StopTarget] = []
    for st in tracker.stop_targets(ego, t):
        f = features[st.feature]
        if f.kind == TRAFFIC_LIGHT:
            # too close to stop: go through (yellow/red dilemma)
            s_brake = s_ego + ego.v ** 2 / (2.0 * 0.8 * params.b_max)
            if s_brake > tracker.s_line[st.feature]:
                continue
        stops.append(st)
    wps = extract_desired_trajectory(path, ego, features, h, cfg.dt, v_cruise, stops)

    high, low = [], []
    for i, f in enumerate(features):
        if f.kind != SPEED_LIMIT:
            continue
        inside = [k for k, w in enumerate(wps) if f.zone.contains(w.x_des, w.y_des)]
        if f.zone.contains(ego.x, ego.y):
            inside = [0] + inside
        if inside:
            start = max(1, min(inside) - 1)
            rule = speed_limit_rule(f.v_max, h, start)
            high.append((f"speed_limit[{i}]", rule))
            low.append((f"speed_limit[{i}]", rule))
    for st in stops:
        f = features[st.feature]
        if f.kind == STOP_SIGN:
            done = tracker.stopped_count.get(st.feature, 0)
            if done > 0:
                # already stopped: stay stopped until the stop is complete
                rule = speed_limit_rule(EPS_STOP, min(h, tracker.stop_steps - done), start=1)
            else:
                if deadlines.get(st.feature, -1) < step:
                    deadlines[st.feature] = step + h
                rule = stop_sign_rule(deadlines[st.feature] - step)
            high.append((f"stop_sign[{st.feature}]", rule))
            low.append((f"stop_sign[{st.feature}]", rule))
        else:
            x, y, _ = path.interpolate(st.s_stop)
            rule = red_light_rule((x, y), path.tangent(st.s_stop), h)
            if s_ego > st.s_stop:
                rule = Always(1, h, rule.child)
            high.append((f"red_light[{st.feature}]", rule))
            low.append((f"red_light[{st.feature}]", rule))
            if st.s_stop - s_ego <= HOLD_DISTANCE:
                # at the line: come to rest as soon as braking allows and stay there
                k0 = max(1, math.ceil((ego.v - V_HOLD) / (0.8 * params.b_max * cfg.dt)))
                if k0 <= h:
                    x_h, y_h, psi_h = path.interpolate(s_ego)
                    wps = [Waypoint(x_h, y_h, psi_h, 0.0)] * (h + 1)
                    # the monitor allows twice the planner's bound for model mismatch
                    high.append((f"hold[{st.feature}]", speed_limit_rule(V_HOLD, h, start=k0)))
                    low.append((f"hold[{st.feature}]", speed_limit_rule(2 * V_HOLD, h, start=k0)))

    near = nearby_vehicles((ego.x, ego.y), vehicles, cfg.r_near)
    preds = predict_trajectories(vehicles, near, h, cfg.dt)
    dims = {v.id: (v.bbox_length, v.bbox_width) for v in vehicles if v.id in preds}
    if preds:
        centers = {i: [(s.x, s.y) for s in traj] for i, traj in preds.items()}
        high.append(("collision", collision_1norm_rule(centers, cfg.d_safe, h, start=1)))
        boxes = [[aabb_of(traj[k], *dims[i]) for i, traj in sorted(preds.items())] for k in range(h + 1)]
        low.append(("collision", collision_aabb_rule(boxes, params.bbox_length, params.bbox_width, h, start=1)))
    names = [n for n, _ in low]
    return RuleBundle(ActiveRuleSet(tuple(high)), ActiveRuleSet(tuple(low)),
                      EnvSnapshot(wps, preds, dims), names)


class TwoLevelController:
    """Keeps the previous plan and last applied input between ticks."""

    def __init__(self, cfg: MpcConfig, params: VehicleParams, planner_params: VehicleParams | None = None,
                 deterministic: bool = True):
        self.cfg = cfg
        self.params = params
        self.planner_params = planner_params or params
        self.deterministic = deterministic
        self.prev_plan: list[ControlInput] | None = None
        self.u_prev = ControlInput()
        self.deadlines: dict[int, int] = {}

    def tick(self, world, rng: np.random.Generator) -> ControllerOutput:
        cfg = self.cfg
        ego = world.ego.to_simple()
        bundle = assemble_rules(ego, world.t, world.path, world.features, world.tracker, world.vehicles,
                                cfg, self.planner_params, world.v_cruise, world.step, self.deadlines)
        hl = high_level_step(ego, self.prev_plan, bundle.snapshot, bundle.high, cfg, self.planner_params,
                             u_prev=self.u_prev, deterministic=self.deterministic)
        if cfg.monitor:
            out = low_level_step(world.ego, hl.plan, bundle.low, cfg, self.params, rng, reused=hl.reused)
        else:
            src = Source(REUSED_PREVIOUS if hl.reused else OPTIMAL)
            out = ControllerOutput(hl.plan[0], list(hl.plan), src)
        out.diagnostics.hl_solve_time = hl.solve_time
        out.diagnostics.hl_status = hl.status.value
        out.diagnostics.nodes = hl.nodes
        out.diagnostics.binaries = hl.binaries
        out.diagnostics.active_rules = bundle.names
        self.prev_plan = out.plan
        self.u_prev = out.applied
        return out
