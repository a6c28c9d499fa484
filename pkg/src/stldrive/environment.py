"""Road geometry, traffic participants and the two collision predicates."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .vehicle import ControlInput, DetailedState, SimpleState, VehicleParams, simple_step

ARC_EPS = 1e-9


@dataclass(frozen=True)
class Aabb:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box {self}")

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def to_list(self) -> list[float]:
        return [self.x_min, self.x_max, self.y_min, self.y_max]


def aabb_of(state: SimpleState | DetailedState, length: float, width: float) -> Aabb:
    """Axis-aligned envelope of the heading-rotated vehicle rectangle."""
    if length <= 0 or width <= 0:
        raise ValueError("box dimensions must be positive")
    c, s = abs(math.cos(state.psi)), abs(math.sin(state.psi))
    hx = 0.5 * (c * length + s * width)
    hy = 0.5 * (s * length + c * width)
    return Aabb(state.x - hx, state.x + hx, state.y - hy, state.y + hy)


def aabb_intersects(a: Aabb, b: Aabb) -> bool:
    # closed boxes: touching counts as a collision
    return a.x_min <= b.x_max and b.x_min <= a.x_max and a.y_min <= b.y_max and b.y_min <= a.y_max


def aabb_gap(a: Aabb, b: Aabb) -> float:
    """Euclidean distance between two boxes (0 when they intersect)."""
    dx = max(0.0, b.x_min - a.x_max, a.x_min - b.x_max)
    dy = max(0.0, b.y_min - a.y_max, a.y_min - b.y_max)
    return math.hypot(dx, dy)


def one_norm_clearance(ego_pos: Sequence[float], other_pos: Sequence[float]) -> float:
    return abs(ego_pos[0] - other_pos[0]) + abs(ego_pos[1] - other_pos[1])


# ---------------------------------------------------------------- paths


class ReferencePath:
    """Ordered, equally spaced (x, y, psi_ref) points.

    ``arc`` holds the cumulative polyline length at each point; positions in
    between are linearly interpolated.
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("path points must be an (M, 3) array of x, y, psi")
        if len(pts) < 2:
            raise ValueError("a reference path needs at least 2 points")
        seg = np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1]))
        if np.any(seg <= 0):
            raise ValueError("path points must be distinct")
        if seg.max() > 1.01 * seg.min() and seg.max() - seg.min() > 1e-9:
            raise ValueError("path spacing is not uniform within 1%")
        self.points = pts
        self.arc = np.concatenate([[0.0], np.cumsum(seg)])
        self.spacing = float(seg.mean())
        # continuous heading for interpolation
        self._psi_unwrapped = np.unwrap(pts[:, 2])

    def __len__(self) -> int:
        return len(self.points)

    @property
    def length(self) -> float:
        return float(self.arc[-1])

    @classmethod
    def from_polyline(cls, xy, spacing: float = 1.0) -> "ReferencePath":
        xy = np.asarray(xy, dtype=float)
        seg = np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))
        s = np.concatenate([[0.0], np.cumsum(seg)])
        n = max(1, int(round(s[-1] / spacing)))
        s_new = np.linspace(0.0, s[-1], n + 1)
        x = np.interp(s_new, s, xy[:, 0])
        y = np.interp(s_new, s, xy[:, 1])
        psi = np.arctan2(np.gradient(y), np.gradient(x))
        return cls(np.column_stack([x, y, psi]))

    @classmethod
    def from_segments(cls, start: Sequence[float], heading: float, segments: Iterable[dict],
                      spacing: float = 1.0) -> "ReferencePath":
        """Build from straight / constant-curvature pieces.

        Each segment is ``{"type": "straight", "length": L}`` or
        ``{"type": "arc", "radius": R, "angle": theta}`` (theta > 0 turns left).
        """
        x, y, psi = float(start[0]), float(start[1]), float(heading)
        pieces = []  # (s0, length, x0, y0, psi0, curvature)
        s0 = 0.0
        for seg in segments:
            if seg["type"] == "straight":
                length, kappa = float(seg["length"]), 0.0
            elif seg["type"] == "arc":
                radius, angle = float(seg["radius"]), float(seg["angle"])
                length, kappa = radius * abs(angle), math.copysign(1.0 / radius, angle)
            else:
                raise ValueError(f"unknown path segment type {seg['type']!r}")
            if length <= 0:
                raise ValueError("path segments need positive length")
            pieces.append((s0, length, x, y, psi, kappa))
            x, y, psi = _advance(x, y, psi, kappa, length)
            s0 += length
        total = s0
        n = max(1, int(round(total / spacing)))
        pts = []
        for s in np.linspace(0.0, total, n + 1):
            for p0, length, px, py, ppsi, kappa in pieces:
                if s <= p0 + length + 1e-9:
                    break
            pts.append(_advance(px, py, ppsi, kappa, s - p0))
        pts = np.array(pts)
        pts[:, 2] = np.array([math.atan2(math.sin(a), math.cos(a)) for a in pts[:, 2]])
        return cls(pts)

    def nearest_index(self, x: float, y: float) -> int:
        d2 = (self.points[:, 0] - x) ** 2 + (self.points[:, 1] - y) ** 2
        return int(np.argmin(d2))

    def project(self, x: float, y: float) -> float:
        """Arc-length coordinate of the closest polyline position."""
        i = self.nearest_index(x, y)
        best_s, best_d = float(self.arc[i]), math.inf
        for j in (i - 1, i):
            if j < 0 or j + 1 >= len(self.points):
                continue
            p, q = self.points[j, :2], self.points[j + 1, :2]
            d = q - p
            t = float(np.clip(np.dot([x - p[0], y - p[1]], d) / np.dot(d, d), 0.0, 1.0))
            foot = p + t * d
            dist = math.hypot(x - foot[0], y - foot[1])
            if dist < best_d:
                best_d, best_s = dist, float(self.arc[j] + t * (self.arc[j + 1] - self.arc[j]))
        return best_s

    def interpolate(self, s: float) -> tuple[float, float, float]:
        s = min(max(s, 0.0), self.length)
        x = float(np.interp(s, self.arc, self.points[:, 0]))
        y = float(np.interp(s, self.arc, self.points[:, 1]))
        psi = float(np.interp(s, self.arc, self._psi_unwrapped))
        return x, y, math.atan2(math.sin(psi), math.cos(psi))

    def tangent(self, s: float) -> tuple[float, float]:
        psi = self.interpolate(s)[2]
        return math.cos(psi), math.sin(psi)

    def to_dict(self) -> dict:
        return {"points": self.points.tolist()}


def _advance(x, y, psi, kappa, ds):
    if kappa == 0.0:
        return x + ds * math.cos(psi), y + ds * math.sin(psi), psi
    psi1 = psi + kappa * ds
    return (x + (math.sin(psi1) - math.sin(psi)) / kappa,
            y - (math.cos(psi1) - math.cos(psi)) / kappa, psi1)


def tracking_error(path: ReferencePath, state: SimpleState | DetailedState) -> float:
    """Euclidean distance from the vehicle center to the path polyline."""
    pts = path.points[:, :2]
    q = np.array([state.x, state.y])
    if len(pts) == 1:
        return float(np.hypot(*(q - pts[0])))
    a, seg = pts[:-1], np.diff(pts, axis=0)
    t = np.clip(np.einsum("ij,ij->i", q - a, seg) / np.maximum(np.einsum("ij,ij->i", seg, seg), 1e-300), 0.0, 1.0)
    foot = a + t[:, None] * seg
    return float(np.hypot(*(foot - q).T).min())


# ---------------------------------------------------------------- features


SPEED_LIMIT = "speed_limit"
STOP_SIGN = "stop_sign"
TRAFFIC_LIGHT = "traffic_light"
STOP_COLORS = ("red", "yellow")


@dataclass(frozen=True)
class RoadFeature:
    kind: str
    zone: Aabb
    v_max: float | None = None
    stop_line: tuple[float, float] | None = None
    phases: tuple[tuple[str, float], ...] = ()
    # ego center comes to rest this far before the stop line
    stop_offset: float = 0.0

    def __post_init__(self):
        if self.kind == SPEED_LIMIT:
            if self.v_max is None or not self.v_max > 0:
                raise ValueError(f"speed_limit feature needs v_max > 0, got {self.v_max}")
        elif self.kind in (STOP_SIGN, TRAFFIC_LIGHT):
            if self.stop_line is None:
                raise ValueError(f"{self.kind} feature needs a stop_line")
            if self.kind == TRAFFIC_LIGHT:
                if not self.phases:
                    raise ValueError("traffic_light feature needs a phase schedule")
                for color, dur in self.phases:
                    if not dur > 0:
                        raise ValueError("traffic light phase durations must be > 0")
                    if color not in ("red", "yellow", "green"):
                        raise ValueError(f"unknown light color {color!r}")
        else:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.stop_offset < 0:
            raise ValueError("stop_offset must be >= 0")

    def light_color(self, t: float) -> str:
        """Phase at time ``t``; the schedule repeats cyclically."""
        cycle = sum(d for _, d in self.phases)
        tau = t % cycle
        for color, dur in self.phases:
            if tau < dur - 1e-9:
                return color
            tau -= dur
        return self.phases[-1][0]

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "zone": self.zone.to_list()}
        if self.v_max is not None:
            d["v_max"] = self.v_max
        if self.stop_line is not None:
            d["stop_line"] = list(self.stop_line)
        if self.phases:
            d["phases"] = [[c, dur] for c, dur in self.phases]
        if self.stop_offset:
            d["stop_offset"] = self.stop_offset
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RoadFeature":
        return cls(kind=d["kind"], zone=Aabb(*d["zone"]), v_max=d.get("v_max"),
                   stop_line=tuple(d["stop_line"]) if d.get("stop_line") is not None else None,
                   phases=tuple((c, float(t)) for c, t in d.get("phases", [])),
                   stop_offset=float(d.get("stop_offset", 0.0)))


@dataclass(frozen=True)
class StopTarget:
    """A point along the path the ego must not pass while the feature holds."""
    feature: int
    s_stop: float
    s_zone_start: float


class FeatureTracker:
    """Activation bookkeeping for stop signs and traffic lights.

    A stop feature is active while the ego center is inside its zone and has
    not crossed the stop line.  A stop sign is released once the ego has been
    at <= ``v_stopped`` for ``stop_steps`` consecutive steps inside the zone.
    """

    def __init__(self, features: Sequence[RoadFeature], path: ReferencePath,
                 v_stopped: float = 0.1, stop_steps: int = 3):
        self.features = list(features)
        self.path = path
        self.v_stopped = v_stopped
        self.stop_steps = stop_steps
        self.s_line = {}
        self.s_zone = {}
        for i, f in enumerate(self.features):
            if f.stop_line is not None:
                self.s_line[i] = path.project(*f.stop_line)
                self.s_zone[i] = _zone_entry_arc(path, f.zone, self.s_line[i])
        self.stopped_count = {i: 0 for i in self.s_line}
        self.completed: set[int] = set()

    def copy(self) -> "FeatureTracker":
        other = FeatureTracker.__new__(FeatureTracker)
        other.__dict__.update(self.__dict__)
        other.stopped_count = dict(self.stopped_count)
        other.completed = set(self.completed)
        return other

    def crossed(self, i: int, s_ego: float) -> bool:
        return s_ego > self.s_line[i]

    def in_zone(self, i: int, state) -> bool:
        return self.features[i].zone.contains(state.x, state.y)

    def stop_targets(self, state, t: float) -> list[StopTarget]:
        s_ego = self.path.project(state.x, state.y)
        out = []
        for i in sorted(self.s_line):
            f = self.features[i]
            if not self.in_zone(i, state) or self.crossed(i, s_ego):
                continue
            if f.kind == STOP_SIGN and i in self.completed:
                continue
            if f.kind == TRAFFIC_LIGHT and f.light_color(t) not in STOP_COLORS:
                continue
            out.append(StopTarget(i, self.s_line[i] - f.stop_offset, self.s_zone[i]))
        return out

    def update(self, state, speed: float) -> None:
        for i, f in enumerate(self.features):
            if f.kind != STOP_SIGN or i in self.completed:
                continue
            if self.in_zone(i, state) and speed <= self.v_stopped:
                self.stopped_count[i] += 1
                if self.stopped_count[i] >= self.stop_steps:
                    self.completed.add(i)
            else:
                self.stopped_count[i] = 0


def _zone_entry_arc(path: ReferencePath, zone: Aabb, s_line: float) -> float:
    """First path arc inside ``zone`` on the approach to ``s_line``."""
    inside = [(s, zone.contains(x, y)) for (x, y, _), s in zip(path.points, path.arc)]
    entry = s_line
    for s, ins in reversed(inside):
        if s > s_line:
            continue
        if not ins:
            break
        entry = s
    return float(entry)


@dataclass(frozen=True)
class Waypoint:
    x_des: float
    y_des: float
    psi_des: float
    v_des: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_des, self.y_des, self.psi_des, self.v_des])


def speed_cap_at(x: float, y: float, features: Sequence[RoadFeature], v_cruise: float) -> float:
    v = v_cruise
    for f in features:
        if f.kind == SPEED_LIMIT and f.zone.contains(x, y):
            v = min(v, f.v_max)
    return v


def extract_desired_trajectory(path: ReferencePath, state: SimpleState, features: Sequence[RoadFeature],
                               h: int, dt: float, v_cruise: float,
                               stops: Sequence[StopTarget] = (), v_creep: float = 1.0) -> list[Waypoint]:
    """H+1 waypoints marching along the path from the ego's projection.

    ``stops`` are the currently active stop targets (see FeatureTracker); the
    desired speed ramps linearly in arc length from the zone entry down to
    zero at the target, floored at ``v_creep`` so the target is reached in
    finite time, and waypoints never pass the target.
    """
    if h < 1:
        raise ValueError("horizon must be >= 1")
    if len(path) == 0:
        raise ValueError("empty path")
    s = path.project(state.x, state.y)
    s_limit = path.length
    for st in stops:
        s_limit = min(s_limit, max(st.s_stop, s))
    out = []
    for _ in range(h + 1):
        x, y, psi = path.interpolate(s)
        v = speed_cap_at(x, y, features, v_cruise)
        for st in stops:
            if s >= st.s_stop - ARC_EPS:
                v = 0.0
                continue
            span = max(st.s_stop - st.s_zone_start, ARC_EPS)
            frac = min(1.0, (st.s_stop - s) / span)
            v = min(v, max(v_cruise * frac, min(v_creep, v)))
        if s >= s_limit - ARC_EPS:
            v = 0.0
        out.append(Waypoint(x, y, psi, v))
        s = min(s + v * dt, s_limit)
    return out


# ---------------------------------------------------------------- traffic


CONSTANT_VELOCITY = "constant_velocity"
STATIONARY = "stationary"
SCRIPTED = "scripted"


@dataclass(frozen=True)
class TrafficVehicle:
    id: int
    state: SimpleState
    bbox_length: float = 4.22
    bbox_width: float = 1.8
    behavior: str = CONSTANT_VELOCITY
    # scripted: rows of (t, x, y, psi, v), linearly interpolated
    schedule: tuple[tuple[float, float, float, float, float], ...] = ()
    cruise_speed: float | None = None

    def __post_init__(self):
        if self.behavior not in (CONSTANT_VELOCITY, STATIONARY, SCRIPTED):
            raise ValueError(f"unknown vehicle behavior {self.behavior!r}")
        if self.behavior == SCRIPTED and len(self.schedule) < 1:
            raise ValueError("scripted vehicle needs a schedule")
        if self.bbox_length <= 0 or self.bbox_width <= 0:
            raise ValueError("vehicle box dimensions must be positive")

    @property
    def target_speed(self) -> float:
        return self.state.v if self.cruise_speed is None else self.cruise_speed

    def box(self) -> Aabb:
        return aabb_of(self.state, self.bbox_length, self.bbox_width)

    def to_dict(self) -> dict:
        d = {"id": self.id, "state": [self.state.x, self.state.y, self.state.psi, self.state.v],
             "behavior": self.behavior}
        if (self.bbox_length, self.bbox_width) != (4.22, 1.8):
            d["bbox"] = [self.bbox_length, self.bbox_width]
        if self.schedule:
            d["schedule"] = [list(r) for r in self.schedule]
        if self.cruise_speed is not None:
            d["cruise_speed"] = self.cruise_speed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrafficVehicle":
        length, width = d.get("bbox", [4.22, 1.8])
        return cls(id=int(d["id"]), state=SimpleState(*map(float, d["state"])),
                   bbox_length=float(length), bbox_width=float(width),
                   behavior=d.get("behavior", CONSTANT_VELOCITY),
                   schedule=tuple(tuple(map(float, r)) for r in d.get("schedule", [])),
                   cruise_speed=d.get("cruise_speed"))


def nearby_vehicles(ego_pos: Sequence[float], vehicles: Sequence[TrafficVehicle], r_near: float) -> list[int]:
    """Ids whose center lies within ``r_near`` (inclusive), in input order."""
    if r_near <= 0:
        raise ValueError("r_near must be positive")
    return [v.id for v in vehicles
            if math.hypot(v.state.x - ego_pos[0], v.state.y - ego_pos[1]) <= r_near]


_PREDICT_PARAMS = VehicleParams()


def predict_trajectories(vehicles: Sequence[TrafficVehicle], ids: Iterable[int], h: int,
                         dt: float) -> dict[int, list[SimpleState]]:
    """Constant speed and heading roll-out of the requested vehicles."""
    by_id = {v.id: v for v in vehicles}
    out = {}
    coast = ControlInput(0.0, 0.0)
    for i in ids:
        if i not in by_id:
            raise KeyError(f"unknown vehicle id {i}")
        s = by_id[i].state
        seq = [s]
        for _ in range(h):
            seq.append(simple_step(seq[-1], coast, dt, _PREDICT_PARAMS))
        out[i] = seq
    return out


def scripted_state(schedule, t: float) -> SimpleState:
    times = [r[0] for r in schedule]
    if t <= times[0]:
        return SimpleState(*schedule[0][1:])
    if t >= times[-1]:
        return SimpleState(*schedule[-1][1:])
    j = int(np.searchsorted(times, t, side="right")) - 1
    r0, r1 = schedule[j], schedule[j + 1]
    w = (t - r0[0]) / (r1[0] - r0[0])
    psi = r0[3] + w * math.atan2(math.sin(r1[3] - r0[3]), math.cos(r1[3] - r0[3]))
    return SimpleState(r0[1] + w * (r1[1] - r0[1]), r0[2] + w * (r1[2] - r0[2]),
                       math.atan2(math.sin(psi), math.cos(psi)), r0[4] + w * (r1[4] - r0[4]))


def lookahead_box(state: SimpleState, length: float, width: float, distance: float) -> Aabb:
    """Envelope of the ``distance``-long corridor in front of a vehicle."""
    c, s = math.cos(state.psi), math.sin(state.psi)
    front = 0.5 * length
    corners = []
    for along in (front, front + distance):
        for across in (-0.5 * width, 0.5 * width):
            corners.append((state.x + along * c - across * s, state.y + along * s + across * c))
    xs, ys = zip(*corners)
    return Aabb(min(xs), max(xs), min(ys), max(ys))


def boxes_at(states: Sequence, length: float, width: float) -> list[Aabb]:
    return [aabb_of(s, length, width) for s in states]


def replace_state(v: TrafficVehicle, state: SimpleState) -> TrafficVehicle:
    return replace(v, state=state)
