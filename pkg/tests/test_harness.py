import json
import math

import pytest

from stldrive.cli import EXIT_COLLISION, EXIT_ERROR, EXIT_OK, main
from stldrive.environment import FeatureTracker, TrafficVehicle
from stldrive.harness import TRACE_COLUMNS, initial_world, min_gap, read_trace, run
from stldrive.scenario import BUNDLED, ScenarioError, bundled_path, load_scenario, scenario_from_dict
from stldrive.vehicle import ControlInput, SimpleState
from stldrive.world import step_world

BASE = {
    "name": "short",
    "path": {"start": [0, 0], "heading": 0, "spacing": 0.5, "segments": [{"type": "straight", "length": 30}]},
    "ego": {"x": 0, "y": 0, "psi": 0, "v": 5},
    "v_cruise": 6,
    "max_steps": 80,
}


def with_(**kw):
    d = json.loads(json.dumps(BASE))
    d.update(kw)
    return d


def write(tmp_path, d, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d, indent=1))
    return p


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_round_trip(name):
    with open(bundled_path(name)) as fh:
        raw = json.load(fh)
    assert load_scenario(name).to_dict() == raw


def test_minimal_scenario_defaults():
    sc = scenario_from_dict(BASE)
    assert sc.max_steps == 80 and sc.seed == 0
    assert sc.planner_params == sc.params


@pytest.mark.parametrize("patch,field", [
    ({"features": [{"kind": "speed_limit", "zone": [0, 10, -1, 1], "v_max": 0}]}, "features[0]"),
    ({"ego": {"x": 0, "y": 5, "psi": 0, "v": 5}}, "ego"),
    ({"ego": {"x": 0, "y": 0, "psi": 0}}, "ego"),
    ({"controller": {"h": 0}}, "controller"),
    ({"vehicle_params": {"mass": -1}}, "vehicle_params"),
    ({"planner_params": {"wings": 2}}, "vehicle_params"),
    ({"vehicles": [{"id": 1, "state": [5, 0, 0, 0]}, {"id": 1, "state": [9, 0, 0, 0]}]}, "vehicles"),
    ({"max_steps": 0}, "max_steps"),
    ({"v_cruise": -2}, "v_cruise"),
    ({"colour": 1}, "unknown"),
])
def test_validation_names_the_field(patch, field):
    with pytest.raises(ScenarioError, match=field.replace("[", r"\[").replace("]", r"\]")):
        scenario_from_dict(with_(**patch))


def test_load_reports_line_numbers(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n "name": "x",\n "path": [1,\n}')
    with pytest.raises(ScenarioError, match="line 4"):
        load_scenario(p)
    d = with_(features=[{"kind": "speed_limit", "zone": [0, 10, -1, 1], "v_max": 0}])
    with pytest.raises(ScenarioError, match=r"line \d+.*v_max"):
        load_scenario(write(tmp_path, d))
    with pytest.raises(ScenarioError, match="cannot read"):
        load_scenario(tmp_path / "missing.json")


def test_step_world_moves_traffic_and_blocks():
    d = with_(vehicles=[
        {"id": 1, "state": [10, 3.5, 0, 4], "behavior": "constant_velocity"},
        {"id": 2, "state": [20, 0, 0, 0], "behavior": "stationary"},
        {"id": 3, "state": [15, 0, 0, 4], "behavior": "constant_velocity"},
    ])
    w = initial_world(scenario_from_dict(d))
    nxt = step_world(w, ControlInput(), 0.1)
    by_id = {v.id: v for v in nxt.vehicles}
    assert by_id[1].state.x == pytest.approx(10.4)
    assert by_id[2].state.x == 20
    # vehicle 3 has the stationary one 0.78 m ahead of its front bumper
    assert by_id[3].state.x == 15 and by_id[3].state.v == 0
    assert nxt.t == pytest.approx(0.1) and nxt.step == 1
    assert nxt.ego.x == pytest.approx(0.5)
    assert w.ego.x == 0


def test_tracker_not_shared_between_worlds():
    d = with_(features=[{"kind": "stop_sign", "zone": [0, 10, -3, 3], "stop_line": [10, 0]}],
              ego={"x": 1, "y": 0, "psi": 0, "v": 0})
    w = initial_world(scenario_from_dict(d))
    nxt = step_world(w, ControlInput(), 0.1)
    assert nxt.tracker.stopped_count[0] == 1
    assert w.tracker.stopped_count[0] == 0


def test_min_gap():
    w = initial_world(scenario_from_dict(BASE))
    assert min_gap(w) == (math.inf, False)
    w.vehicles = (TrafficVehicle(1, SimpleState(10, 0, 0, 0)),)
    gap, hit = min_gap(w)
    assert gap == pytest.approx(10 - 4.22) and not hit
    w.vehicles = (TrafficVehicle(1, SimpleState(4.22, 0, 0, 0)),)
    assert min_gap(w) == (0.0, True)


def test_run_reaches_goal_and_writes_outputs(tmp_path):
    trace, summary = run(scenario_from_dict(BASE), out_dir=tmp_path)
    assert summary.termination == "goal"
    assert summary.max_tracking_error < 0.05
    rows = read_trace(tmp_path / "trace.csv")
    assert list(rows[0]) == TRACE_COLUMNS
    assert len(rows) == len(trace) == summary.steps
    assert (tmp_path / "timing.csv").exists()
    js = json.loads((tmp_path / "summary.json").read_text())
    assert js["termination"] == "goal" and js["min_distance"] is None


def test_run_is_deterministic(tmp_path):
    d = with_(vehicles=[{"id": 1, "state": [18, 0, 0, 0], "behavior": "stationary"}], max_steps=30)
    sc = scenario_from_dict(d)
    run(sc, out_dir=tmp_path / "a")
    run(sc, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


def test_overrides(tmp_path):
    trace, summary = run(scenario_from_dict(BASE), horizon=4, max_steps=3, monitor=False)
    assert summary.steps == 3 and summary.termination == "max_steps"
    assert set(trace.column("source")) == {"Optimal"}


def test_cli_exit_codes(tmp_path, capsys):
    good = write(tmp_path, BASE)
    assert main(["run", str(good), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert "goal" in capsys.readouterr().out
    crash = write(tmp_path, with_(vehicles=[{"id": 1, "state": [12, 0, 0, 0], "behavior": "stationary"}]),
                  "crash.json")
    assert main(["run", str(crash), "--no-monitor", "--max-steps", "60"]) in (EXIT_OK, EXIT_COLLISION)
    bad = write(tmp_path, with_(max_steps=-1), "bad.json")
    assert main(["run", str(bad)]) == EXIT_ERROR
    assert "max_steps" in capsys.readouterr().err
    assert main(["run", str(good), "--horizon", "0"]) == EXIT_ERROR


def test_cli_collision_exit_code(tmp_path):
    # a planner that believes it brakes much harder than it does hits the stopped car
    d = with_(vehicles=[{"id": 1, "state": [14, 0, 0, 0], "behavior": "stationary"}],
              ego={"x": 0, "y": 0, "psi": 0, "v": 6}, v_cruise=6, planner_params={"b_max": 40.0},
              controller={"r_near": 8.0})
    p = write(tmp_path, d)
    assert main(["run", str(p), "--no-monitor"]) == EXIT_COLLISION
    assert main(["run", str(p)]) == EXIT_OK


def test_feature_tracker_from_scenario():
    d = with_(features=[{"kind": "stop_sign", "zone": [10, 20, -3, 3], "stop_line": [20, 0]}])
    w = initial_world(scenario_from_dict(d))
    assert isinstance(w.tracker, FeatureTracker)
    assert w.tracker.s_line[0] == pytest.approx(20.0)
