import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stldrive.controller import (FULL_BRAKE, OPTIMAL, REUSED_PREVIOUS, SAMPLED, EnvSnapshot, MpcConfig, Source,
                                 assemble_rules, high_level_step, low_level_step, perturb, sample_ball,
                                 shift_plan)
from stldrive.environment import (Aabb, FeatureTracker, ReferencePath, RoadFeature, TrafficVehicle,
                                  extract_desired_trajectory)
from stldrive.miqp import Status
from stldrive.stl import ActiveRuleSet, Affine, Always, Pred, speed_limit_rule
from stldrive.vehicle import ControlInput, DetailedState, SimpleState, VehicleParams, simulate_trajectory

P = VehicleParams()
CFG = MpcConfig()
PATH = ReferencePath.from_segments((0.0, 0.0), 0.0, [{"type": "straight", "length": 200}], 0.5)


def plan_for(ego, features=(), vehicles=(), v_cruise=8.0, prev=None, cfg=CFG):
    tracker = FeatureTracker(features, PATH)
    bundle = assemble_rules(ego, 0.0, PATH, list(features), tracker, list(vehicles), cfg, P, v_cruise)
    return bundle, high_level_step(ego, prev, bundle.snapshot, bundle.high, cfg, P, deterministic=True)


def test_straight_cruise_needs_no_input():
    _, res = plan_for(SimpleState(10, 0, 0, 8))
    assert res.status is Status.OPTIMAL and not res.reused
    assert len(res.plan) == CFG.h
    assert max(abs(u.delta) for u in res.plan) < 1e-4
    assert max(abs(u.gamma) for u in res.plan) < 1e-4


def test_offset_start_steers_back():
    _, res = plan_for(SimpleState(10, 0.5, 0, 8))
    assert res.plan[0].delta < 0
    traj = simulate_trajectory(SimpleState(10, 0.5, 0, 8), res.plan, CFG.dt, P)
    assert abs(traj[-1].y) < 0.5


def test_speed_limit_respected_in_plan():
    zone = RoadFeature("speed_limit", Aabb(0, 200, -5, 5), v_max=8.33)
    bundle, res = plan_for(SimpleState(10, 0, 0, 8.5), [zone], v_cruise=11.0)
    assert "speed_limit[0]" in bundle.names
    assert res.status is Status.OPTIMAL
    traj = simulate_trajectory(SimpleState(10, 0, 0, 8.5), res.plan, CFG.dt, P)
    assert all(s.v <= 8.33 + 1e-6 for s in traj[1:])


def test_infeasible_reuses_shifted_plan():
    zone = RoadFeature("speed_limit", Aabb(0, 200, -5, 5), v_max=5.0)
    prev = [ControlInput(0.01 * k, -0.5) for k in range(CFG.h)]
    _, res = plan_for(SimpleState(10, 0, 0, 12), [zone], prev=prev)
    assert res.status is Status.INFEASIBLE
    assert res.reused
    assert res.plan == shift_plan(prev, CFG.h)


def test_plan_keeps_clearance_from_stopped_vehicle():
    lead = TrafficVehicle(0, SimpleState(16, 0, 0, 0), behavior="stationary")
    cfg = MpcConfig(r_near=15.0)
    ego = SimpleState(10, 0, 0, 3)
    bundle, res = plan_for(ego, vehicles=[lead], cfg=cfg)
    assert "collision" in bundle.names
    assert res.binaries > 0
    traj = simulate_trajectory(ego, res.plan, cfg.dt, P)
    assert all(abs(s.x - 16) + abs(s.y) >= cfg.d_safe - 1e-3 for s in traj[1:])


def test_snapshot_length_checked():
    wps = extract_desired_trajectory(PATH, SimpleState(0, 0, 0, 5), [], 3, 0.1, 8.0)
    with pytest.raises(ValueError):
        high_level_step(SimpleState(0, 0, 0, 5), None, EnvSnapshot(wps), ActiveRuleSet(()), CFG, P)


def test_shift_plan():
    plan = [ControlInput(1, 0), ControlInput(2, 0), ControlInput(3, 0)]
    assert shift_plan(plan, 3) == [ControlInput(2, 0), ControlInput(3, 0), ControlInput(3, 0)]
    assert shift_plan([], 2) == [ControlInput(), ControlInput()]
    assert len(shift_plan(plan, 5)) == 5


def v_at_step1_le(c):
    return Always(1, 1, Pred(Affine((0.0, 0.0, 0.0, 1.0), c, "<=")))


def test_low_level_accepts_good_plan():
    plan = [ControlInput()] * CFG.h
    out = low_level_step(DetailedState(0, 0, 5, 0, 0, 0), plan, ActiveRuleSet(()), CFG, P,
                         np.random.default_rng(0))
    assert out.source == Source(OPTIMAL)
    assert out.applied == plan[0]
    out = low_level_step(DetailedState(0, 0, 5, 0, 0, 0), plan, ActiveRuleSet(()), CFG, P,
                         np.random.default_rng(0), reused=True)
    assert str(out.source) == REUSED_PREVIOUS


def test_low_level_samples_a_repair():
    plan = [ControlInput(0.0, 0.2)] * CFG.h
    rules = ActiveRuleSet((("cap", v_at_step1_le(5.0 + 0.05)),))
    out = low_level_step(DetailedState(0, 0, 5, 0, 0, 0), plan, rules, CFG, P, np.random.default_rng(1))
    assert out.source.kind == SAMPLED
    assert 1 <= out.source.tries <= CFG.n_samples
    assert str(out.source) == f"Sampled({out.source.tries})"
    d = ((out.applied.delta - plan[0].delta) / P.delta_max, out.applied.gamma - plan[0].gamma)
    assert math.hypot(*d) <= CFG.r_ball + 1e-12
    assert out.applied.gamma < 0.05 / (P.a_max * CFG.dt) + 1e-9
    assert out.plan[1:] == plan[1:]
    assert out.diagnostics.monitor_verdicts == {"cap": False}


def test_low_level_full_brake_when_nothing_works():
    plan = [ControlInput(0.1, 0.5)] * CFG.h
    rules = ActiveRuleSet((("stop", speed_limit_rule(0.01, CFG.h)),))
    out = low_level_step(DetailedState(0, 0, 10, 0, 0, 0), plan, rules, CFG, P, np.random.default_rng(0))
    assert out.source == Source(FULL_BRAKE)
    assert out.applied == ControlInput(0.1, -1.0)


def test_low_level_plan_length_checked():
    with pytest.raises(ValueError):
        low_level_step(DetailedState(0, 0, 5, 0, 0, 0), [ControlInput()], ActiveRuleSet(()), CFG, P,
                       np.random.default_rng(0))


@settings(max_examples=200)
@given(st.integers(0, 2**31), st.floats(0.01, 2.0))
def test_ball_samples_inside(seed, r):
    dx, dy = sample_ball(np.random.default_rng(seed), r)
    assert math.hypot(dx, dy) <= r * (1 + 1e-12)


def test_ball_is_uniform_in_area():
    rng = np.random.default_rng(0)
    pts = np.array([sample_ball(rng, 1.0) for _ in range(20000)])
    r2 = (pts ** 2).sum(axis=1)
    # uniform disc: E[r^2] = 1/2, and each quadrant holds a quarter
    assert r2.mean() == pytest.approx(0.5, abs=0.01)
    assert np.mean(pts[:, 0] > 0) == pytest.approx(0.5, abs=0.02)


@settings(max_examples=100)
@given(st.floats(-0.61, 0.61), st.floats(-1, 1), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_perturb_stays_in_bounds(delta, gamma, a, b):
    u = perturb(ControlInput(delta, gamma), (a, b), P)
    assert P.delta_min <= u.delta <= P.delta_max
    assert -1.0 <= u.gamma <= 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        MpcConfig(h=0)
    with pytest.raises(ValueError):
        MpcConfig(r_ball=0)
    with pytest.raises(ValueError, match="unknown"):
        MpcConfig.from_dict({"horizon": 5})
    assert MpcConfig.from_dict(CFG.to_dict()) == CFG


def test_stop_sign_deadline_anchored():
    sign = RoadFeature("stop_sign", Aabb(28, 40, -3, 3), stop_line=(40.0, 0.0))
    tracker = FeatureTracker([sign], PATH)
    deadlines = {}
    ego = SimpleState(30, 0, 0, 4)
    b0 = assemble_rules(ego, 0.0, PATH, [sign], tracker, [], CFG, P, 8.0, step=5, deadlines=deadlines)
    assert deadlines == {0: 5 + CFG.h}
    b1 = assemble_rules(ego, 0.3, PATH, [sign], tracker, [], CFG, P, 8.0, step=8, deadlines=deadlines)
    (_, f0), (_, f1) = b0.high.rules[0], b1.high.rules[0]
    assert (f0.a, f0.b) == (0, CFG.h)
    assert (f1.a, f1.b) == (0, CFG.h - 3)


def test_red_light_rules_and_dilemma_zone():
    light = RoadFeature("traffic_light", Aabb(90, 110, -3, 3), stop_line=(110.0, 0.0),
                        phases=(("red", 100.0),), stop_offset=3.5)
    tracker = FeatureTracker([light], PATH)
    slow = assemble_rules(SimpleState(95, 0, 0, 5), 0.0, PATH, [light], tracker, [], CFG, P, 8.0)
    assert slow.names == ["red_light[0]"]
    # 15 m from the line at 20 m/s cannot stop: go through
    fast = assemble_rules(SimpleState(95, 0, 0, 20), 0.0, PATH, [light], tracker, [], CFG, P, 8.0)
    assert fast.names == []
    held = assemble_rules(SimpleState(106.3, 0, 0, 0.0), 0.0, PATH, [light], tracker, [], CFG, P, 8.0)
    assert held.names == ["red_light[0]", "hold[0]"]
    assert all(w.v_des == 0.0 for w in held.snapshot.waypoints)


def test_collision_rules_only_for_nearby():
    far = TrafficVehicle(3, SimpleState(60, 0, 0, 0))
    near = TrafficVehicle(4, SimpleState(15, 3.5, 0, 0))
    b = assemble_rules(SimpleState(10, 0, 0, 5), 0.0, PATH, [], FeatureTracker([], PATH), [far, near], CFG, P, 8.0)
    assert b.names == ["collision"]
    assert set(b.snapshot.predictions) == {4}
