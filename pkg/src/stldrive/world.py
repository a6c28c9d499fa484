"""Deterministic world state and its one-tick update."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

from .environment import (CONSTANT_VELOCITY, SCRIPTED, STATIONARY, FeatureTracker, ReferencePath,
                          RoadFeature, TrafficVehicle, aabb_intersects, aabb_of, lookahead_box,
                          scripted_state)
from .vehicle import ControlInput, DetailedState, SimpleState, VehicleParams, detailed_step

LOOKAHEAD = 5.0


@dataclass
class World:
    t: float
    step: int
    ego: DetailedState
    vehicles: tuple[TrafficVehicle, ...]
    path: ReferencePath
    features: tuple[RoadFeature, ...]
    tracker: FeatureTracker
    params: VehicleParams
    v_cruise: float

    @property
    def ego_simple(self) -> SimpleState:
        return self.ego.to_simple()

    def ego_box(self):
        return aabb_of(self.ego, self.params.bbox_length, self.params.bbox_width)

    def light_phases(self) -> dict[int, str]:
        return {i: f.light_color(self.t) for i, f in enumerate(self.features) if f.phases}


def _blocked(v: TrafficVehicle, others: Sequence, distance: float) -> bool:
    """Another box lies within ``distance`` straight ahead of ``v``."""
    ahead = lookahead_box(v.state, v.bbox_length, v.bbox_width, distance)
    c, s = math.cos(v.state.psi), math.sin(v.state.psi)
    for box, (ox, oy) in others:
        if ((ox - v.state.x) * c + (oy - v.state.y) * s) <= 0.0:
            continue
        if aabb_intersects(ahead, box):
            return True
    return False


def advance_vehicle(v: TrafficVehicle, t_next: float, dt: float, blocked: bool) -> TrafficVehicle:
    s = v.state
    if v.behavior == STATIONARY:
        return replace(v, state=SimpleState(s.x, s.y, s.psi, 0.0))
    if v.behavior == SCRIPTED:
        return replace(v, state=scripted_state(v.schedule, t_next))
    speed = 0.0 if blocked else v.target_speed
    return replace(v, state=SimpleState(s.x + dt * speed * math.cos(s.psi),
                                        s.y + dt * speed * math.sin(s.psi), s.psi, speed))


def step_world(world: World, applied: ControlInput, dt: float) -> World:
    """Advance the ego on the detailed model and every other vehicle by its
    behavior.  Constant-velocity vehicles stop while something is within
    ``LOOKAHEAD`` m directly ahead (the ego included)."""
    ego = detailed_step(world.ego, applied, dt, world.params)
    everyone = [(w.box(), (w.state.x, w.state.y)) for w in world.vehicles]
    everyone.append((world.ego_box(), (world.ego.x, world.ego.y)))
    t_next = world.t + dt
    moved = []
    for j, v in enumerate(world.vehicles):
        blocked = False
        if v.behavior == CONSTANT_VELOCITY:
            blocked = _blocked(v, everyone[:j] + everyone[j + 1:], LOOKAHEAD)
        moved.append(advance_vehicle(v, t_next, dt, blocked))
    tracker = world.tracker.copy()
    tracker.update(ego.to_simple(), ego.speed)
    return replace(world, t=t_next, step=world.step + 1, ego=ego, vehicles=tuple(moved), tracker=tracker)
