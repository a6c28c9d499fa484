"""Scenario files: JSON with sections ``path``, ``ego``, ``vehicles``,
``features``, ``controller``, ``vehicle_params`` (plus optional
``planner_params`` overrides for the planner's model of the ego).

Minimal example::

    {"name": "straight",
     "path": {"start": [0, 0], "heading": 0, "spacing": 1.0,
              "segments": [{"type": "straight", "length": 100}]},
     "ego": {"x": 0, "y": 0, "psi": 0, "v": 5},
     "v_cruise": 8, "max_steps": 200}

A path is either ``segments`` (straight / constant-curvature arcs from
``start`` and ``heading``) or a ``points`` polyline; both are resampled to
``spacing``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .controller import MpcConfig
from .environment import ReferencePath, RoadFeature, TrafficVehicle, tracking_error
from .vehicle import DetailedState, SimpleState, VehicleParams

MAX_START_ERROR = 2.0
BUNDLED = ("comparison", "traffic_rules", "safety", "safety_mismatch", "scalability")


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    path_spec: dict
    path: ReferencePath
    ego_init: SimpleState
    ego_detailed: DetailedState
    vehicles: list[TrafficVehicle] = field(default_factory=list)
    features: list[RoadFeature] = field(default_factory=list)
    cfg: MpcConfig = field(default_factory=MpcConfig)
    params: VehicleParams = field(default_factory=VehicleParams)
    planner_overrides: dict = field(default_factory=dict)
    v_cruise: float = 8.0
    max_steps: int = 300
    seed: int = 0

    @property
    def planner_params(self) -> VehicleParams:
        return self.params.updated(**self.planner_overrides) if self.planner_overrides else self.params

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "path": self.path_spec,
            "ego": {"x": self.ego_init.x, "y": self.ego_init.y, "psi": self.ego_init.psi, "v": self.ego_init.v},
            "vehicles": [v.to_dict() for v in self.vehicles],
            "features": [f.to_dict() for f in self.features],
            "controller": self.cfg.to_dict(),
            "vehicle_params": self.params.to_dict(),
            "v_cruise": self.v_cruise,
            "max_steps": self.max_steps,
            "seed": self.seed,
        }
        if self.ego_detailed != DetailedState.from_simple(self.ego_init):
            d["ego"]["detailed"] = list(self.ego_detailed.as_array())
        if self.planner_overrides:
            d["planner_params"] = dict(self.planner_overrides)
        return d


def _field(path: str, exc: Exception) -> ScenarioError:
    return ScenarioError(f"{path}: {exc}")


def build_path(spec: dict) -> ReferencePath:
    spacing = float(spec.get("spacing", 1.0))
    if "segments" in spec:
        return ReferencePath.from_segments(tuple(spec.get("start", (0.0, 0.0))), float(spec.get("heading", 0.0)),
                                           spec["segments"], spacing)
    if "points" in spec:
        return ReferencePath.from_polyline(spec["points"], spacing)
    raise ValueError("needs 'segments' or 'points'")


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ScenarioError("top level must be a JSON object")
    known = {"name", "path", "ego", "vehicles", "features", "controller", "vehicle_params",
             "planner_params", "v_cruise", "max_steps", "seed"}
    unknown = set(d) - known
    if unknown:
        raise ScenarioError(f"unknown top-level field(s): {sorted(unknown)}")
    for key in ("path", "ego"):
        if key not in d:
            raise ScenarioError(f"missing required field '{key}'")
    try:
        path = build_path(d["path"])
    except (KeyError, TypeError, ValueError) as exc:
        raise _field("path", exc) from exc
    try:
        e = d["ego"]
        ego = SimpleState(float(e["x"]), float(e["y"]), float(e["psi"]), float(e["v"]))
        det = DetailedState.from_array(e["detailed"]) if "detailed" in e else DetailedState.from_simple(ego)
        if ego.v < 0:
            raise ValueError("v must be >= 0")
    except (KeyError, TypeError, ValueError) as exc:
        raise _field("ego", exc) from exc
    err = tracking_error(path, ego)
    if err > MAX_START_ERROR:
        raise ScenarioError(f"ego: start is {err:.2f} m from the path (max {MAX_START_ERROR})")
    vehicles, features = [], []
    for i, v in enumerate(d.get("vehicles", [])):
        try:
            vehicles.append(TrafficVehicle.from_dict(v))
        except (KeyError, TypeError, ValueError) as exc:
            raise _field(f"vehicles[{i}]", exc) from exc
    if len({v.id for v in vehicles}) != len(vehicles):
        raise ScenarioError("vehicles: duplicate ids")
    for i, f in enumerate(d.get("features", [])):
        try:
            features.append(RoadFeature.from_dict(f))
        except (KeyError, TypeError, ValueError) as exc:
            raise _field(f"features[{i}]", exc) from exc
    try:
        cfg = MpcConfig.from_dict(d.get("controller", {}))
    except (TypeError, ValueError) as exc:
        raise _field("controller", exc) from exc
    try:
        params = VehicleParams.from_dict(d.get("vehicle_params", {}))
        overrides = dict(d.get("planner_params", {}))
        params.updated(**overrides)
    except (TypeError, ValueError) as exc:
        raise _field("vehicle_params", exc) from exc
    v_cruise = d.get("v_cruise", 8.0)
    if not isinstance(v_cruise, (int, float)) or not v_cruise > 0:
        raise ScenarioError(f"v_cruise: must be a positive number, got {v_cruise!r}")
    max_steps = d.get("max_steps", 300)
    if not isinstance(max_steps, int) or max_steps < 1:
        raise ScenarioError(f"max_steps: must be an integer >= 1, got {max_steps!r}")
    seed = d.get("seed", 0)
    if not isinstance(seed, int):
        raise ScenarioError(f"seed: must be an integer, got {seed!r}")
    return Scenario(str(d.get("name", "scenario")), d["path"], path, ego, det, vehicles, features,
                    cfg, params, overrides, float(v_cruise), max_steps, seed)


def load_scenario(source: str | Path) -> Scenario:
    """Read and validate a scenario file.  A bare bundled name such as
    ``comparison`` resolves to the copy shipped with the package."""
    p = Path(source)
    if not p.exists() and str(source) in BUNDLED:
        p = bundled_path(str(source))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {source}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        return scenario_from_dict(data)
    except ScenarioError as exc:
        line = _line_of(text, str(exc).split(":")[0].split("[")[0])
        where = f" (line {line})" if line else ""
        raise ScenarioError(f"{p}{where}: {exc}") from exc


def _line_of(text: str, key: str) -> int | None:
    """Line of the first occurrence of ``"key":`` in the raw file."""
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("stldrive") / "scenarios" / f"{name}.json"))


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=1) + "\n")
