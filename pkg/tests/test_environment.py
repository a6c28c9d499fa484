import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stldrive.environment import (Aabb, FeatureTracker, ReferencePath, RoadFeature, StopTarget, TrafficVehicle,
                                  aabb_gap, aabb_intersects, aabb_of, extract_desired_trajectory,
                                  lookahead_box, nearby_vehicles, one_norm_clearance, predict_trajectories,
                                  scripted_state, speed_cap_at, tracking_error)
from stldrive.vehicle import SimpleState


def straight(length=100.0, spacing=1.0):
    return ReferencePath.from_segments((0.0, 0.0), 0.0, [{"type": "straight", "length": length}], spacing)


def test_aabb_of_rotated():
    b = aabb_of(SimpleState(0, 0, math.pi / 2, 0), 4.0, 2.0)
    assert b.to_list() == pytest.approx([-1.0, 1.0, -2.0, 2.0])
    with pytest.raises(ValueError):
        aabb_of(SimpleState(0, 0, 0, 0), 0.0, 1.0)
    with pytest.raises(ValueError):
        Aabb(1, 0, 0, 1)


def test_aabb_touching_counts_and_gap():
    a, b = Aabb(0, 1, 0, 1), Aabb(1, 2, 0, 1)
    assert aabb_intersects(a, b)
    assert aabb_gap(a, b) == 0.0
    c = Aabb(4, 5, 5, 6)
    assert not aabb_intersects(a, c)
    assert aabb_gap(a, c) == pytest.approx(5.0)


boxes = st.tuples(st.floats(-20, 20), st.floats(0.1, 5), st.floats(-20, 20), st.floats(0.1, 5)).map(
    lambda t: Aabb(t[0], t[0] + t[1], t[2], t[2] + t[3]))


@settings(max_examples=100)
@given(boxes, boxes)
def test_aabb_symmetry_and_consistency(a, b):
    assert aabb_intersects(a, b) == aabb_intersects(b, a)
    assert aabb_gap(a, b) == pytest.approx(aabb_gap(b, a))
    # positive gap iff disjoint
    assert (aabb_gap(a, b) > 0) == (not aabb_intersects(a, b))


def test_one_norm_clearance():
    assert one_norm_clearance((1, 2), (-1, 0)) == 4.0


def test_path_from_segments_arc():
    r = 20.0
    path = ReferencePath.from_segments((0.0, 0.0), 0.0, [{"type": "arc", "radius": r, "angle": math.pi / 2}], 0.5)
    assert path.length == pytest.approx(r * math.pi / 2, rel=1e-3)
    x, y, psi = path.interpolate(path.length)
    assert (x, y) == pytest.approx((r, r), abs=1e-2)
    assert psi == pytest.approx(math.pi / 2, abs=1e-3)
    # every point lies on the circle
    d = np.hypot(path.points[:, 0], path.points[:, 1] - r)
    assert np.allclose(d, r, atol=1e-6)


def test_path_projection_and_tangent():
    path = straight()
    assert path.project(12.3, 1.0) == pytest.approx(12.3)
    assert path.project(-5, 0) == 0.0
    assert path.project(150, 0) == pytest.approx(100.0)
    assert path.tangent(50) == pytest.approx((1.0, 0.0))
    assert tracking_error(path, SimpleState(10.5, 0.7, 0, 0)) == pytest.approx(0.7)


def test_polyline_resampled():
    path = ReferencePath.from_polyline([[0, 0], [10, 0], [10, 10]], 1.0)
    assert path.length == pytest.approx(20.0)
    assert np.all(np.diff(path.arc) <= 1.0 + 1e-9)


@settings(max_examples=50)
@given(st.floats(0, 100), st.floats(-3, 3))
def test_projection_inverts_interpolation(s, offset):
    path = straight()
    x, y, psi = path.interpolate(s)
    nx, ny = -math.sin(psi), math.cos(psi)
    assert path.project(x + offset * nx, y + offset * ny) == pytest.approx(s, abs=1e-6)


def light(phases, zone=(90, 110, -3, 3), line=(110.0, 0.0), offset=3.5):
    return RoadFeature("traffic_light", Aabb(*zone), stop_line=line, phases=phases, stop_offset=offset)


def test_light_schedule_cycles():
    f = light((("green", 12.0), ("red", 30.0)))
    assert f.light_color(0) == "green"
    assert f.light_color(11.9) == "green"
    assert f.light_color(12.0) == "red"
    assert f.light_color(42.0) == "green"


@pytest.mark.parametrize("bad", [
    dict(kind="speed_limit", zone=Aabb(0, 1, 0, 1)),
    dict(kind="stop_sign", zone=Aabb(0, 1, 0, 1)),
    dict(kind="traffic_light", zone=Aabb(0, 1, 0, 1), stop_line=(1, 0)),
    dict(kind="traffic_light", zone=Aabb(0, 1, 0, 1), stop_line=(1, 0), phases=(("blue", 1.0),)),
    dict(kind="yield", zone=Aabb(0, 1, 0, 1)),
])
def test_feature_validation(bad):
    with pytest.raises(ValueError):
        RoadFeature(**bad)


def test_feature_round_trip():
    f = light((("green", 1.0), ("red", 2.0)))
    assert RoadFeature.from_dict(f.to_dict()) == f


def test_tracker_stop_sign_release():
    path = straight()
    sign = RoadFeature("stop_sign", Aabb(28, 40, -3, 3), stop_line=(40.0, 0.0))
    tr = FeatureTracker([sign], path)
    assert tr.s_line[0] == pytest.approx(40.0)
    assert tr.s_zone[0] == pytest.approx(28.0)
    s = SimpleState(35, 0, 0, 0)
    assert tr.stop_targets(s, 0.0) == [StopTarget(0, 40.0, 28.0)]
    other = tr.copy()
    for _ in range(2):
        tr.update(s, 0.05)
    tr.update(s, 1.0)
    assert tr.stopped_count[0] == 0
    for _ in range(3):
        tr.update(s, 0.05)
    assert 0 in tr.completed
    assert tr.stop_targets(s, 0.0) == []
    assert not other.completed


def test_tracker_light_only_when_red_and_not_crossed():
    f = light((("green", 10.0), ("red", 10.0)))
    tr = FeatureTracker([f], straight(150))
    assert tr.stop_targets(SimpleState(100, 0, 0, 5), 5.0) == []
    assert tr.stop_targets(SimpleState(100, 0, 0, 5), 15.0)[0].s_stop == pytest.approx(106.5)
    assert tr.stop_targets(SimpleState(80, 0, 0, 5), 15.0) == []
    assert tr.stop_targets(SimpleState(110.5, 0, 0, 5), 15.0) == []


def test_speed_cap():
    f = RoadFeature("speed_limit", Aabb(10, 20, -1, 1), v_max=5.0)
    assert speed_cap_at(15, 0, [f], 10) == 5.0
    assert speed_cap_at(25, 0, [f], 10) == 10


def test_waypoints_follow_path_at_cruise():
    wps = extract_desired_trajectory(straight(), SimpleState(10, 0.5, 0, 8), [], 10, 0.1, 8.0)
    assert len(wps) == 11
    xs = [w.x_des for w in wps]
    assert xs[0] == pytest.approx(10.0)
    assert np.diff(xs) == pytest.approx(0.8)
    assert all(w.y_des == 0 for w in wps)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 39), st.floats(0.5, 12))
def test_waypoints_ramp_monotone_and_stop_short(x, v_cruise):
    path = straight()
    stop = StopTarget(0, 40.0, 28.0)
    wps = extract_desired_trajectory(path, SimpleState(x, 0, 0, 5), [], 10, 0.1, v_cruise, stops=[stop])
    vs = [w.v_des for w in wps]
    arc = [w.x_des for w in wps]
    assert all(a <= 40.0 + 1e-9 for a in arc)
    assert np.all(np.diff(arc) >= -1e-12)
    inside = [v for v, a in zip(vs, arc) if a >= 28.0]
    assert np.all(np.diff(inside) <= 1e-9)


def test_waypoints_reach_target_and_halt():
    wps = extract_desired_trajectory(straight(), SimpleState(39.95, 0, 0, 0.5), [], 5, 0.1, 8.0,
                                     stops=[StopTarget(0, 40.0, 28.0)])
    assert wps[-1].x_des == pytest.approx(40.0)
    assert wps[-1].v_des == 0.0


def test_waypoint_errors():
    with pytest.raises(ValueError):
        extract_desired_trajectory(straight(), SimpleState(0, 0, 0, 0), [], 0, 0.1, 8.0)


def test_nearby_inclusive_and_ordered():
    vs = [TrafficVehicle(i, SimpleState(float(x), 0, 0, 0)) for i, x in enumerate([10, 3, 10.0001, -10])]
    assert nearby_vehicles((0, 0), vs, 10.0) == [0, 1, 3]
    with pytest.raises(ValueError):
        nearby_vehicles((0, 0), vs, 0.0)


def test_predictions_constant_velocity():
    v = TrafficVehicle(7, SimpleState(0, 0, math.pi / 2, 5))
    pred = predict_trajectories([v], [7], 4, 0.1)[7]
    assert len(pred) == 5
    assert pred[-1].y == pytest.approx(2.0)
    assert pred[-1].x == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(KeyError):
        predict_trajectories([v], [3], 4, 0.1)


def test_scripted_interpolation():
    sched = ((0.0, 0, 0, 0, 1), (2.0, 2, 4, 0.2, 3))
    assert scripted_state(sched, 1.0) == SimpleState(1, 2, pytest.approx(0.1), 2)
    assert scripted_state(sched, -1.0) == SimpleState(0, 0, 0, 1)
    assert scripted_state(sched, 5.0).x == 2


def test_vehicle_round_trip_and_validation():
    v = TrafficVehicle(1, SimpleState(1, 2, 0.1, 3), bbox_length=5.0, bbox_width=2.0, cruise_speed=4.0)
    assert TrafficVehicle.from_dict(v.to_dict()) == v
    with pytest.raises(ValueError):
        TrafficVehicle(1, SimpleState(0, 0, 0, 0), behavior="teleport")
    with pytest.raises(ValueError):
        TrafficVehicle(1, SimpleState(0, 0, 0, 0), behavior="scripted")


def test_lookahead_box_in_front():
    b = lookahead_box(SimpleState(0, 0, 0, 0), 4.0, 2.0, 5.0)
    assert b.to_list() == pytest.approx([2.0, 7.0, -1.0, 1.0])


def test_tracking_error_between_vertices():
    path = straight(spacing=5.0)
    # on the polyline between two vertices the error is zero
    assert tracking_error(path, SimpleState(12.5, 0, 0, 0)) == pytest.approx(0.0, abs=1e-12)
    assert tracking_error(path, SimpleState(12.5, -0.3, 0, 0)) == pytest.approx(0.3)
    assert tracking_error(path, SimpleState(-3, 4, 0, 0)) == pytest.approx(5.0)
