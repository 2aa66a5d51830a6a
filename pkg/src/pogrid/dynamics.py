"""Planar vehicle models: two-track for cars, single-track for bicycles.

State integration uses a fixed-step classical Runge-Kutta scheme. Tire forces
follow a three-parameter saturating slip curve with static wheel loads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence, Union

import numpy as np

from .errors import PogridError

G = 9.81
STEERING_RATIO = 15.0
V_EPS = 0.1
SLIP_MAX = 0.12
DEFAULT_DT = 0.01

WHEELS = ("fl", "fr", "rl", "rr")


@dataclass(frozen=True)
class VehicleState:
    X: float = 0.0
    Y: float = 0.0
    v: float = 0.0
    beta: float = 0.0
    psi: float = 0.0
    psi_dot: float = 0.0
    ax: float = 0.0
    ay: float = 0.0

    def __post_init__(self):
        if self.v < 0:
            raise PogridError(f"speed must be non-negative, got {self.v}")
        if not abs(self.beta) < math.pi / 2:
            raise PogridError(f"slip angle out of range: {self.beta}")
        if not (math.isfinite(self.ax) and math.isfinite(self.ay)):
            raise PogridError("accelerations must be finite")


@dataclass(frozen=True)
class TireParams:
    mu_max: float = 1.0
    B_stiff: float = 10.0
    C_shape: float = 1.9

    def __post_init__(self):
        if not 0 < self.mu_max <= 1.5:
            raise PogridError(f"mu_max must lie in (0, 1.5], got {self.mu_max}")
        if self.B_stiff <= 0 or self.C_shape <= 0:
            raise PogridError("tire stiffness and shape factors must be positive")

    def force(self, slip: float, load: float) -> float:
        return self.mu_max * load * math.sin(self.C_shape * math.atan(self.B_stiff * slip))

    def peak_slip(self) -> float:
        """Slip at which the curve saturates (or +inf if it never peaks)."""
        if self.C_shape <= 1.0:
            return math.inf
        return math.tan(math.pi / (2 * self.C_shape)) / self.B_stiff

    def slip_for(self, ratio: float) -> float:
        """Invert the rising branch: slip giving ``ratio`` of peak force."""
        ratio = max(-1.0, min(1.0, ratio))
        angle = math.asin(ratio) / self.C_shape
        return math.tan(angle) / self.B_stiff


@dataclass(frozen=True)
class TwoTrackParams:
    """Rigid-body vehicle parameters. Single-track models ignore ``w``."""

    m: float = 1500.0
    Iz: float = 2500.0
    lf: float = 1.2
    lr: float = 1.5
    w: float = 1.6
    tire: TireParams = field(default_factory=TireParams)

    def __post_init__(self):
        if min(self.m, self.Iz, self.lf, self.lr) <= 0 or self.w < 0:
            raise PogridError("vehicle parameters must be positive")

    @property
    def wheelbase(self) -> float:
        return self.lf + self.lr

    @property
    def wheel_load(self) -> float:
        return self.m * G / 4.0


CAR_PARAMS = TwoTrackParams()
BICYCLE_PARAMS = TwoTrackParams(m=90.0, Iz=12.0, lf=0.55, lr=0.55, w=0.0)


@dataclass(frozen=True)
class DriverInput:
    steering_wheel_angle: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0


@dataclass(frozen=True)
class SingleTrackInput:
    a_long: float = 0.0
    steering_angle: float = 0.0


@dataclass(frozen=True)
class WheelForces:
    """Per-wheel forces in the vehicle frame, ordered fl, fr, rl, rr."""

    Fx: tuple[float, float, float, float]
    Fy: tuple[float, float, float, float]
    delta: tuple[float, float, float, float]

    def __getitem__(self, wheel: str) -> tuple[float, float]:
        k = WHEELS.index(wheel)
        return self.Fx[k], self.Fy[k]


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    states: tuple[VehicleState, ...]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def at(self, t: float) -> VehicleState:
        k = int(round(t / self.dt)) if self.dt else 0
        if k < 0 or k >= len(self.states) or abs(self.t[k] - t) > 1e-9:
            raise PogridError(f"time {t} is not a sample of this trajectory")
        return self.states[k]

    def positions(self) -> np.ndarray:
        return np.array([(s.X, s.Y) for s in self.states])

    def arc_length(self, t: float) -> float:
        k = int(round(t / self.dt)) if self.dt else 0
        xy = self.positions()[: k + 1]
        return float(np.sum(np.hypot(*np.diff(xy, axis=0).T))) if k else 0.0


def _wheel_positions(params: TwoTrackParams):
    h = params.w / 2.0
    return ((params.lf, h), (params.lf, -h), (-params.lr, h), (-params.lr, -h))


def _clamp01(x: float) -> float:
    return 0.0 if x < 0.0 else 1.0 if x > 1.0 else x


def _slip_angle(v, beta, psi_dot, x_i, y_i, delta):
    vx = v * math.cos(beta) - y_i * psi_dot
    vy = v * math.sin(beta) + x_i * psi_dot
    if vx == 0.0 and vy == 0.0:
        return 0.0
    return delta - math.atan2(vy, vx)


def _wheel_force(tire: TireParams, load: float, slip_long: float, slip_lat: float, delta: float):
    fxw = tire.force(slip_long, load)
    fyw = tire.force(slip_lat, load)
    limit = tire.mu_max * load
    norm = math.hypot(fxw, fyw)
    if norm > limit:
        fxw *= limit / norm
        fyw *= limit / norm
    c, s = math.cos(delta), math.sin(delta)
    return fxw * c - fyw * s, fxw * s + fyw * c


def wheel_forces(state: VehicleState, params: TwoTrackParams, inp: DriverInput) -> WheelForces:
    throttle = _clamp01(inp.throttle)
    brake = _clamp01(inp.brake)
    slip_long = -brake * SLIP_MAX if brake > 0 else throttle * SLIP_MAX
    delta_f = inp.steering_wheel_angle / STEERING_RATIO
    load = params.wheel_load
    fx, fy, deltas = [], [], []
    for (x_i, y_i), d in zip(_wheel_positions(params), (delta_f, delta_f, 0.0, 0.0)):
        alpha = _slip_angle(state.v, state.beta, state.psi_dot, x_i, y_i, d)
        f_x, f_y = _wheel_force(params.tire, load, slip_long, alpha, d)
        fx.append(f_x)
        fy.append(f_y)
        deltas.append(d)
    return WheelForces(tuple(fx), tuple(fy), tuple(deltas))


def two_track_derivatives(state: VehicleState, forces: WheelForces, params: TwoTrackParams):
    """Return ``(v_dot, beta_dot, psi_ddot)`` from the per-wheel force sums."""
    fx_fl, fx_fr, fx_rl, fx_rr = forces.Fx
    fy_fl, fy_fr, fy_rl, fy_rr = forces.Fy
    sum_fx = fx_fl + fx_fr + fx_rl + fx_rr
    sum_fy = fy_fl + fy_fr + fy_rl + fy_rr
    cb, sb = math.cos(state.beta), math.sin(state.beta)
    v = max(state.v, V_EPS)
    v_dot = (cb * sum_fx + sb * sum_fy) / params.m
    beta_dot = (cb * sum_fy - sb * sum_fx) / (params.m * v) - state.psi_dot
    half_w = params.w / 2.0
    psi_ddot = (
        params.lf * (fy_fl + fy_fr)
        + half_w * (fx_fr - fx_fl)
        - params.lr * (fy_rl + fy_rr)
        + half_w * (fx_rr - fx_rl)
    ) / params.Iz
    return v_dot, beta_dot, psi_ddot


def axle_forces(state: VehicleState, params: TwoTrackParams, inp: SingleTrackInput):
    """Lumped front/rear axle forces ``((Fx_f, Fy_f), (Fx_r, Fy_r))`` in the vehicle frame."""
    load = 2.0 * params.wheel_load
    fx_wheel = params.m * inp.a_long / 2.0
    tire = params.tire
    out = []
    for x_i, d in ((params.lf, inp.steering_angle), (-params.lr, 0.0)):
        alpha = _slip_angle(state.v, state.beta, state.psi_dot, x_i, 0.0, d)
        fyw = tire.force(alpha, load)
        fxw = fx_wheel
        limit = tire.mu_max * load
        norm = math.hypot(fxw, fyw)
        if norm > limit:
            fxw *= limit / norm
            fyw *= limit / norm
        c, s = math.cos(d), math.sin(d)
        out.append((fxw * c - fyw * s, fxw * s + fyw * c))
    return out[0], out[1]


def single_track_derivatives(state: VehicleState, params: TwoTrackParams, inp: SingleTrackInput):
    """Two-track equations with zero track width and small slip angle."""
    (fx_f, fy_f), (fx_r, fy_r) = axle_forces(state, params, inp)
    sum_fx = fx_f + fx_r
    sum_fy = fy_f + fy_r
    beta = state.beta
    v = max(state.v, V_EPS)
    v_dot = (sum_fx + beta * sum_fy) / params.m
    beta_dot = (sum_fy - beta * sum_fx) / (params.m * v) - state.psi_dot
    psi_ddot = (params.lf * fy_f - params.lr * fy_r) / params.Iz
    return v_dot, beta_dot, psi_ddot


InputLike = Union[DriverInput, SingleTrackInput]
Schedule = Union[InputLike, Callable[[float, VehicleState], InputLike]]


class _Kin(NamedTuple):
    # unvalidated view of the state used inside RK4 stages
    v: float
    beta: float
    psi_dot: float


def _rates(y, params, inp, model):
    X, Y, psi, v, beta, psi_dot = y
    st = _Kin(max(v, 0.0), beta, psi_dot)
    if model == "two_track":
        v_dot, beta_dot, psi_ddot = two_track_derivatives(st, wheel_forces(st, params, inp), params)
    else:
        v_dot, beta_dot, psi_ddot = single_track_derivatives(st, params, inp)
    if v <= 0.0 and v_dot < 0.0:
        v_dot = 0.0
    course = psi + beta
    return (v * math.cos(course), v * math.sin(course), psi_dot, v_dot, beta_dot, psi_ddot)


def _body_accel(y, params, inp, model):
    _, _, _, v, beta, psi_dot = y
    rates = _rates(y, params, inp, model)
    v_dot, beta_dot = rates[3], rates[4]
    yaw = beta_dot + psi_dot
    ax = v_dot * math.cos(beta) - v * yaw * math.sin(beta)
    ay = v_dot * math.sin(beta) + v * yaw * math.cos(beta)
    return ax, ay


def _rk4_step(y, h, params, inp, model):
    k1 = _rates(y, params, inp, model)
    y2 = tuple(a + 0.5 * h * b for a, b in zip(y, k1))
    k2 = _rates(y2, params, inp, model)
    y3 = tuple(a + 0.5 * h * b for a, b in zip(y, k2))
    k3 = _rates(y3, params, inp, model)
    y4 = tuple(a + h * b for a, b in zip(y, k3))
    k4 = _rates(y4, params, inp, model)
    return tuple(a + h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))


def integrate(
    initial: VehicleState,
    params: TwoTrackParams,
    input_schedule: Schedule,
    horizon: float,
    dt: float = DEFAULT_DT,
    model: str = "two_track",
) -> Trajectory:
    """Integrate a vehicle model with inputs held constant over each step.

    ``input_schedule`` is either a fixed input or a callable ``(t, state) -> input``
    evaluated at the start of every step (closed-loop controllers use the state).
    """
    if horizon <= 0 or dt <= 0:
        raise PogridError("horizon and dt must be positive")
    if model not in ("two_track", "single_track"):
        raise PogridError(f"unknown model {model!r}")
    n = int(round(horizon / dt))
    if abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise PogridError(f"horizon {horizon} is not a whole number of steps of {dt}")
    schedule = input_schedule if callable(input_schedule) else (lambda t, s, _u=input_schedule: _u)

    y = (initial.X, initial.Y, initial.psi, initial.v, initial.beta, initial.psi_dot)
    states = []
    state = initial
    for k in range(n + 1):
        t = k * dt
        inp = schedule(t, state)
        if k > 0:
            ax, ay = _body_accel(y, params, inp, model)
            state = VehicleState(X=y[0], Y=y[1], v=y[3], beta=y[4], psi=y[2], psi_dot=y[5], ax=ax, ay=ay)
        states.append(state)
        if k == n:
            break
        y = _rk4_step(y, dt, params, inp, model)
        if y[3] <= V_EPS:
            # at standstill there is no slip and no yaw motion
            y = (y[0], y[1], y[2], max(y[3], 0.0), 0.0, 0.0)
    return Trajectory(t=np.arange(n + 1) * dt, states=tuple(states))


def sample_inputs(seq: Sequence[InputLike], dt: float) -> Callable[[float, VehicleState], InputLike]:
    """Piecewise-constant schedule from a list of inputs, one per step."""

    def schedule(t, _state):
        k = min(int(round(t / dt)), len(seq) - 1)
        return seq[k]

    return schedule
