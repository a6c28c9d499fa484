"""Vehicle models: the kinematic bicycle used by the planner and a planar
four-wheel model with Pacejka lateral tire forces used as ground truth.

Both models are integrated with forward Euler.  The detailed model is stiff
at low speed (lateral tire dynamics have time constants of a few ms), so its
Euler integration runs on fixed internal sub-steps of ``SUBSTEP`` seconds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import Sequence

import numpy as np
from numba import njit

GRAVITY = 9.81
SUBSTEP = 0.002
# below this body-frame speed the detailed model falls back to kinematic
# yaw/lateral motion; slip angles are ill-defined near standstill
V_KINEMATIC = 1.0


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    return math.pi - (math.pi - a) % (2.0 * math.pi)


@dataclass(frozen=True)
class SimpleState:
    x: float
    y: float
    psi: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.v], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "SimpleState":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]))


@dataclass(frozen=True)
class DetailedState:
    x: float
    y: float
    vx_body: float
    vy_body: float
    psi: float
    psi_dot: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx_body, self.vy_body, self.psi, self.psi_dot], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "DetailedState":
        return cls(*(float(a) for a in arr[:6]))

    @property
    def speed(self) -> float:
        return math.hypot(self.vx_body, self.vy_body)

    def to_simple(self) -> SimpleState:
        return SimpleState(self.x, self.y, self.psi, self.speed)

    @classmethod
    def from_simple(cls, s: SimpleState) -> "DetailedState":
        return cls(s.x, s.y, s.v, 0.0, s.psi, 0.0)


@dataclass(frozen=True)
class ControlInput:
    delta: float = 0.0
    gamma: float = 0.0


@dataclass(frozen=True)
class VehicleParams:
    lf: float = 2.11
    lr: float = 1.59
    mass: float = 1500.0
    yaw_inertia: float = 2500.0
    a_max: float = 3.0
    b_max: float = 8.0
    delta_min: float = -0.61
    delta_max: float = 0.61
    pacejka_b: float = 10.0
    pacejka_c: float = 1.9
    # peak lateral force per axle; None means 0.9 * mass * g / 2
    pacejka_d: float | None = None
    track_width: float = 1.6
    bbox_length: float = 4.22
    bbox_width: float = 1.8

    def __post_init__(self):
        for name in ("lf", "lr", "mass", "yaw_inertia", "a_max", "b_max",
                     "bbox_length", "bbox_width", "track_width"):
            if not getattr(self, name) > 0:
                raise ValueError(f"VehicleParams.{name} must be > 0, got {getattr(self, name)}")
        if not self.delta_min < 0 < self.delta_max:
            raise ValueError("VehicleParams requires delta_min < 0 < delta_max")
        if self.pacejka_d is not None and self.pacejka_d <= 0:
            raise ValueError("VehicleParams.pacejka_d must be > 0")

    @property
    def axle_peak_force(self) -> float:
        if self.pacejka_d is None:
            return 0.9 * self.mass * GRAVITY / 2.0
        return self.pacejka_d

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown vehicle_params field(s): {sorted(unknown)}")
        return cls(**d)

    def updated(self, **kw) -> "VehicleParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class LinearizedDynamics:
    a_mat: np.ndarray
    b_mat: np.ndarray
    c_vec: np.ndarray
    dt: float

    def apply(self, state: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.a_mat @ state + self.b_mat @ u + self.c_vec


class Model(Enum):
    SIMPLE = "simple"
    DETAILED = "detailed"


def clamp_input(u: ControlInput, params: VehicleParams) -> ControlInput:
    return ControlInput(min(max(u.delta, params.delta_min), params.delta_max),
                        min(max(u.gamma, -1.0), 1.0))


def throttle_to_accel(gamma: float, params: VehicleParams) -> float:
    if not -1.0 <= gamma <= 1.0:
        raise ValueError(f"throttle/brake command {gamma} outside [-1, 1]")
    if gamma >= 0.0:
        return gamma * params.a_max
    return gamma * params.b_max


def simple_step(state: SimpleState, u: ControlInput, dt: float,
                params: VehicleParams, wrap: bool = True) -> SimpleState:
    """One forward-Euler step of the kinematic bicycle.

    Speed is clamped at zero (no reverse gear).  ``wrap=False`` keeps the
    heading continuous, which the planner needs when it linearizes.
    """
    a = throttle_to_accel(u.gamma, params)
    x = state.x + dt * state.v * math.cos(state.psi)
    y = state.y + dt * state.v * math.sin(state.psi)
    psi = state.psi + dt * state.v / params.lf * math.tan(u.delta)
    v = max(0.0, state.v + dt * a)
    return SimpleState(x, y, wrap_angle(psi) if wrap else psi, v)


def linearize_simple(nominal_state: SimpleState, nominal_u: ControlInput, dt: float,
                     params: VehicleParams, wrap: bool = True) -> LinearizedDynamics:
    """Jacobians of :func:`simple_step` at a nominal point, plus the offset
    that makes the affine model exact there.

    The throttle map has a kink at gamma = 0; the throttle-side slope is used
    there.  When the zero-speed clamp is active the speed row is flat.
    """
    x, y, psi, v = nominal_state.x, nominal_state.y, nominal_state.psi, nominal_state.v
    delta, gamma = nominal_u.delta, nominal_u.gamma
    c, s, t = math.cos(psi), math.sin(psi), math.tan(delta)
    a_mat = np.eye(4)
    a_mat[0, 2] = -dt * v * s
    a_mat[0, 3] = dt * c
    a_mat[1, 2] = dt * v * c
    a_mat[1, 3] = dt * s
    a_mat[2, 3] = dt * t / params.lf
    b_mat = np.zeros((4, 2))
    b_mat[2, 0] = dt * v / params.lf * (1.0 + t * t)
    slope = params.a_max if gamma >= 0.0 else params.b_max
    if v + dt * throttle_to_accel(gamma, params) < 0.0:
        a_mat[3, 3] = 0.0
    else:
        b_mat[3, 1] = dt * slope
    nxt = simple_step(nominal_state, nominal_u, dt, params, wrap=wrap).as_array()
    nominal = np.array([x, y, psi, v])
    c_vec = nxt - a_mat @ nominal - b_mat @ np.array([delta, gamma])
    return LinearizedDynamics(a_mat, b_mat, c_vec, dt)


@njit(cache=True)
def _pacejka(alpha, b, c, d):
    return d * math.sin(c * math.atan(b * alpha))


def pacejka_lateral_force(slip_angle: float, b: float, c: float, d: float) -> float:
    """Simplified magic formula ``d * sin(c * atan(b * alpha))``."""
    if not math.isfinite(slip_angle):
        raise ValueError("slip angle must be finite")
    return d * math.sin(c * math.atan(b * slip_angle))


@njit(cache=True)
def _detailed_derivs(st, delta, accel, p):
    lf, lr, mass, iz, tw, pb, pc, pd = p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]
    vx, vy, psi, r = st[2], st[3], st[4], st[5]
    cpsi = math.cos(psi)
    spsi = math.sin(psi)
    out = np.zeros(6)
    if vx < V_KINEMATIC:
        # kinematic regime: yaw rate and lateral speed follow steering geometry
        r_k = vx * math.tan(delta) / (lf + lr)
        vy_k = r_k * lr
        out[0] = vx * cpsi - vy_k * spsi
        out[1] = vx * spsi + vy_k * cpsi
        out[2] = accel
        out[4] = r_k
        return out, True, r_k, vy_k
    half = 0.5 * tw
    dw = 0.5 * pd  # per-wheel peak force
    fx_drive = 0.5 * mass * accel  # rear-wheel drive and brake, split L/R
    cd = math.cos(delta)
    sd = math.sin(delta)
    fx_tot = 0.0
    fy_tot = 0.0
    mz = 0.0
    for i in range(4):
        if i < 2:
            xi = lf
        else:
            xi = -lr
        if i % 2 == 0:
            yi = half
        else:
            yi = -half
        u_w = vx - r * yi
        w_w = vy + r * xi
        if i < 2:
            alpha = delta - math.atan2(w_w, u_w)
            fy_w = _pacejka(alpha, pb, pc, dw)
            fxb = -fy_w * sd
            fyb = fy_w * cd
        else:
            alpha = -math.atan2(w_w, u_w)
            fy_w = _pacejka(alpha, pb, pc, dw)
            fxb = fx_drive
            fyb = fy_w
        fx_tot += fxb
        fy_tot += fyb
        mz += xi * fyb - yi * fxb
    out[0] = vx * cpsi - vy * spsi
    out[1] = vx * spsi + vy * cpsi
    out[2] = fx_tot / mass + r * vy
    out[3] = fy_tot / mass - r * vx
    out[4] = r
    out[5] = mz / iz
    return out, False, 0.0, 0.0


@njit(cache=True)
def _detailed_advance(st, delta, accel, dt, h, p):
    n = max(1, int(round(dt / h)))
    h = dt / n
    s = st.copy()
    for _ in range(n):
        d, kin, r_k, vy_k = _detailed_derivs(s, delta, accel, p)
        vx_new = s[2] + h * d[2]
        if accel <= 0.0 and vx_new < 0.0:
            vx_new = 0.0
        if kin:
            s[0] += h * d[0]
            s[1] += h * d[1]
            s[4] += h * d[4]
            s[2] = vx_new
            s[3] = vy_k
            s[5] = r_k
        else:
            for k in range(6):
                s[k] += h * d[k]
            s[2] = vx_new
    return s


def _param_vector(params: VehicleParams) -> np.ndarray:
    return np.array([params.lf, params.lr, params.mass, params.yaw_inertia,
                     params.track_width, params.pacejka_b, params.pacejka_c,
                     params.axle_peak_force])


def detailed_step(state: DetailedState, u: ControlInput, dt: float,
                  params: VehicleParams, wrap: bool = True) -> DetailedState:
    """Advance the four-wheel model by ``dt`` (Euler on internal sub-steps)."""
    accel = throttle_to_accel(u.gamma, params)
    out = _detailed_advance(state.as_array(), float(u.delta), accel, dt, SUBSTEP,
                            _param_vector(params))
    if wrap:
        out[4] = wrap_angle(out[4])
    return DetailedState.from_array(out)


def simulate_trajectory(initial, controls: Sequence[ControlInput], dt: float,
                        params: VehicleParams, model: Model = Model.SIMPLE,
                        wrap: bool = True) -> list:
    if len(controls) == 0:
        raise ValueError("simulate_trajectory needs at least one control")
    step = simple_step if model is Model.SIMPLE else detailed_step
    states = [initial]
    for u in controls:
        states.append(step(states[-1], u, dt, params, wrap=wrap))
    return states
