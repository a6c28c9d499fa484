"""Discrete-time STL: formula AST, boolean semantics and the traffic-rule library.

Traces are arrays of shape (T, d); row k is the signal at step k.  For the
driving rules the signal is the kinematic state ``[x, y, psi, v]``.

Windows that run past the end of the trace are clipped to the available
samples (weak semantics): Always over an empty window is true, Eventually and
Until over an empty window are false.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .environment import Aabb, aabb_intersects, aabb_of
from .vehicle import DetailedState, SimpleState

# ---------------------------------------------------------------- predicates


@dataclass(frozen=True)
class Affine:
    """``coeffs . signal  (<= | >=)  bound``."""
    coeffs: tuple[float, ...]
    bound: float
    sense: str = "<="

    def __post_init__(self):
        if self.sense not in ("<=", ">="):
            raise ValueError(f"bad predicate sense {self.sense!r}")
        if not np.all(np.isfinite(self.coeffs)) or not np.isfinite(self.bound):
            raise ValueError("predicate coefficients must be finite")

    def value(self, trace: np.ndarray, k: int) -> float:
        return float(np.dot(self.coeffs, trace[k, :len(self.coeffs)]))

    def holds(self, trace: np.ndarray, k: int) -> bool:
        val = self.value(trace, k)
        return val <= self.bound if self.sense == "<=" else val >= self.bound

    def as_leq(self) -> tuple[np.ndarray, float]:
        """Normalized form ``a . x <= b``."""
        a = np.asarray(self.coeffs, dtype=float)
        if self.sense == "<=":
            return a, self.bound
        return -a, -self.bound


@dataclass(frozen=True, eq=False)
class Collision1Norm:
    """Point-mass clearance ``|x - x_i| + |y - y_i| >= d_safe``; ``other[k]`` is
    the other vehicle's predicted position at step k."""
    other: tuple[tuple[float, float], ...]
    d_safe: float

    def holds(self, trace: np.ndarray, k: int) -> bool:
        ox, oy = self.other[min(k, len(self.other) - 1)]
        return abs(trace[k, 0] - ox) + abs(trace[k, 1] - oy) >= self.d_safe


@dataclass(frozen=True, eq=False)
class CollisionAabb:
    """Ego bounding box at step k is disjoint from every box in ``boxes[k]``."""
    boxes: tuple[tuple[Aabb, ...], ...]
    length: float
    width: float

    def holds(self, trace: np.ndarray, k: int) -> bool:
        others = self.boxes[min(k, len(self.boxes) - 1)]
        if not others:
            return True
        ego = aabb_of(SimpleState(trace[k, 0], trace[k, 1], trace[k, 2], 0.0), self.length, self.width)
        return not any(aabb_intersects(ego, b) for b in others)


Predicate = Affine | Collision1Norm | CollisionAabb

# ---------------------------------------------------------------- formulas


@dataclass(frozen=True, eq=False)
class Pred:
    predicate: Predicate


@dataclass(frozen=True, eq=False)
class Not:
    child: Pred

    def __post_init__(self):
        if not isinstance(self.child, Pred):
            raise TypeError("negation is only allowed directly above a predicate")


@dataclass(frozen=True, eq=False)
class And:
    children: tuple


@dataclass(frozen=True, eq=False)
class Or:
    children: tuple


def _check_window(a, b):
    if not 0 <= a <= b:
        raise ValueError(f"bad time window [{a}, {b}]")


@dataclass(frozen=True, eq=False)
class Always:
    a: int
    b: int
    child: object

    def __post_init__(self):
        _check_window(self.a, self.b)


@dataclass(frozen=True, eq=False)
class Eventually:
    a: int
    b: int
    child: object

    def __post_init__(self):
        _check_window(self.a, self.b)


@dataclass(frozen=True, eq=False)
class Until:
    a: int
    b: int
    left: object
    right: object

    def __post_init__(self):
        _check_window(self.a, self.b)


Formula = Pred | Not | And | Or | Always | Eventually | Until


def as_trace(states) -> np.ndarray:
    """Stack states (or rows) into a (T, d) float array."""
    if isinstance(states, np.ndarray):
        return np.atleast_2d(states).astype(float, copy=False)
    rows = []
    for s in states:
        if isinstance(s, DetailedState):
            s = s.to_simple()
        rows.append(s.as_array() if isinstance(s, SimpleState) else np.asarray(s, dtype=float))
    return np.array(rows, dtype=float)


def window(t: int, a: int, b: int, length: int) -> range:
    return range(t + a, min(t + b, length - 1) + 1)


def evaluate(formula: Formula, trace, t: int = 0) -> bool:
    """Boolean satisfaction of ``formula`` by ``trace`` at step ``t``."""
    trace = as_trace(trace)
    return _eval(formula, trace, t, len(trace))


def _eval(f, trace, t, n) -> bool:
    if isinstance(f, Pred):
        return f.predicate.holds(trace, t)
    if isinstance(f, Not):
        return not f.child.predicate.holds(trace, t)
    if isinstance(f, And):
        return all(_eval(c, trace, t, n) for c in f.children)
    if isinstance(f, Or):
        return any(_eval(c, trace, t, n) for c in f.children)
    if isinstance(f, Always):
        return all(_eval(f.child, trace, k, n) for k in window(t, f.a, f.b, n))
    if isinstance(f, Eventually):
        return any(_eval(f.child, trace, k, n) for k in window(t, f.a, f.b, n))
    if isinstance(f, Until):
        for k in window(t, f.a, f.b, n):
            if _eval(f.right, trace, k, n) and all(_eval(f.left, trace, j, n) for j in range(t, k)):
                return True
        return False
    raise TypeError(f"not an STL formula: {f!r}")


def predicates_of(f: Formula) -> list:
    if isinstance(f, Pred):
        return [f.predicate]
    if isinstance(f, Not):
        return [f.child.predicate]
    if isinstance(f, (And, Or)):
        return [p for c in f.children for p in predicates_of(c)]
    if isinstance(f, (Always, Eventually)):
        return predicates_of(f.child)
    if isinstance(f, Until):
        return predicates_of(f.left) + predicates_of(f.right)
    raise TypeError(f"not an STL formula: {f!r}")


def node_count(f: Formula) -> int:
    """Boolean/temporal operator nodes plus predicate leaves."""
    if isinstance(f, (Pred, Not)):
        return 1
    if isinstance(f, (And, Or)):
        return 1 + sum(node_count(c) for c in f.children)
    if isinstance(f, (Always, Eventually)):
        return 1 + node_count(f.child)
    if isinstance(f, Until):
        return 1 + node_count(f.left) + node_count(f.right)
    raise TypeError(f"not an STL formula: {f!r}")


# ---------------------------------------------------------------- rules


@dataclass(frozen=True)
class ActiveRuleSet:
    rules: tuple[tuple[str, Formula], ...] = ()

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.rules]

    def __len__(self) -> int:
        return len(self.rules)


def monitor_trace(rules: ActiveRuleSet, trace) -> dict[str, bool]:
    """Verdict per rule at step 0; the run passes iff every verdict is true."""
    trace = as_trace(trace)
    return {name: evaluate(f, trace, 0) for name, f in rules.rules}


def verdict(verdicts: Mapping[str, bool]) -> bool:
    return all(verdicts.values())


V_INDEX = 3
EPS_STOP = 0.1


def speed_limit_rule(v_max: float, horizon: int, start: int = 0) -> Formula:
    if not v_max > 0:
        raise ValueError(f"speed limit must be positive, got {v_max}")
    return Always(start, horizon, Pred(Affine((0.0, 0.0, 0.0, 1.0), float(v_max), "<=")))


def stop_sign_rule(horizon: int, eps_stop: float = EPS_STOP) -> Formula:
    return Eventually(0, horizon, Pred(Affine((0.0, 0.0, 0.0, 1.0), eps_stop, "<=")))


def red_light_rule(stop_point: Sequence[float], tangent: Sequence[float], horizon: int) -> Formula:
    """Never pass the stop point: signed progress ``t . (p - p_stop) <= 0``
    along the path tangent at the stop point."""
    tx, ty = tangent
    px, py = stop_point
    return Always(0, horizon, Pred(Affine((tx, ty, 0.0, 0.0), tx * px + ty * py, "<=")))


def collision_1norm_rule(others: Mapping[int, Sequence[Sequence[float]]], d_safe: float,
                         horizon: int, start: int = 0) -> Formula:
    preds = tuple(Pred(Collision1Norm(tuple((float(p[0]), float(p[1])) for p in traj), d_safe))
                  for _, traj in sorted(others.items()))
    return Always(start, horizon, And(preds))


def collision_aabb_rule(boxes: Sequence[Sequence[Aabb]], length: float, width: float,
                        horizon: int, start: int = 0) -> Formula:
    return Always(start, horizon, Pred(CollisionAabb(tuple(tuple(b) for b in boxes), length, width)))


def make_rule(kind: str, **params) -> Formula:
    """Rule library entry point: ``speed_limit``, ``stop_sign``, ``red_light``,
    ``collision_1norm`` or ``collision_aabb``."""
    builders = {
        "speed_limit": speed_limit_rule,
        "stop_sign": stop_sign_rule,
        "red_light": red_light_rule,
        "collision_1norm": collision_1norm_rule,
        "collision_aabb": collision_aabb_rule,
    }
    if kind not in builders:
        raise ValueError(f"unknown rule kind {kind!r}")
    return builders[kind](**params)
