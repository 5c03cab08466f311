"""Planar surge/sway/yaw rigid-body model of a floating hull.

World frame: x east, y north, yaw counter-clockwise from +x.  Body frame:
x forward (surge), y to port (sway).  Forces handed to :func:`step_body` are in
the body frame; disturbance forces are in the world frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    if -math.pi < a <= math.pi:
        return a
    w = math.pi - math.fmod(math.pi - a, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    elif w > math.pi:
        w -= TWO_PI
    return w


def wrap_deg(a: float) -> float:
    """Wrap to (-180, 180]."""
    if -180.0 < a <= 180.0:
        return a
    w = 180.0 - math.fmod(180.0 - a, 360.0)
    if w <= -180.0:
        w += 360.0
    elif w > 180.0:
        w -= 360.0
    return w


@dataclass(frozen=True)
class BoatState:
    """Pose and body-frame velocity of one floating body (SI units)."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    u: float = 0.0  # surge, m/s
    v: float = 0.0  # sway, m/s
    r: float = 0.0  # yaw rate, rad/s

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity_body(self) -> np.ndarray:
        return np.array([self.u, self.v])

    def velocity_world(self) -> tuple[float, float]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return c * self.u - s * self.v, s * self.u + c * self.v

    def to_world(self, px: float, py: float) -> tuple[float, float]:
        """World coordinates of the body-frame point (px, py)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return self.x + c * px - s * py, self.y + s * px + c * py

    def to_body(self, wx: float, wy: float) -> tuple[float, float]:
        """Body-frame coordinates of the world point (wx, wy)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx, dy = wx - self.x, wy - self.y
        return c * dx + s * dy, -s * dx + c * dy

    def is_finite(self) -> bool:
        return all(math.isfinite(q) for q in (self.x, self.y, self.yaw, self.u, self.v, self.r))


@dataclass(frozen=True)
class BodyParams:
    mass: float = 35.0  # kg
    yaw_inertia: float = 3.0  # kg m^2
    linear_drag: tuple[float, float] = (20.0, 40.0)  # N s/m, surge and sway
    yaw_drag: float = 5.0  # N m s/rad
    hull_dims: tuple[float, float, float] = (1000.0, 500.0, 250.0)  # mm, length x beam x height

    def __post_init__(self):
        if not (self.mass > 0 and self.yaw_inertia > 0):
            raise ValueError("mass and yaw_inertia must be positive")
        if min(self.linear_drag) < 0 or self.yaw_drag < 0:
            raise ValueError("drag coefficients must be non-negative")
        if len(self.linear_drag) != 2 or len(self.hull_dims) != 3:
            raise ValueError("linear_drag needs 2 entries and hull_dims 3")

    @classmethod
    def large_hull(cls) -> "BodyParams":
        """The 4 m x 2 m full-scale hull, with mass and drag scaled by plan area."""
        return cls(mass=560.0, yaw_inertia=780.0, linear_drag=(320.0, 640.0),
                   yaw_drag=1280.0, hull_dims=(4000.0, 2000.0, 600.0))


def kinetic_energy(state: BoatState, params: BodyParams) -> float:
    return 0.5 * params.mass * (state.u ** 2 + state.v ** 2) + 0.5 * params.yaw_inertia * state.r ** 2


def step_body(state: BoatState, params: BodyParams, body_force, disturbance, dt: float) -> BoatState:
    """Advance one body by ``dt`` with semi-implicit Euler.

    Velocities are updated first from thrust + disturbance with the linear
    drag taken implicitly, then the pose is advanced with the new velocities.
    The body-frame velocity is re-expressed in the rotated frame so the world
    velocity carries over unchanged (no spurious Coriolis gain).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    X, Y, N = (float(q) for q in body_force)
    dX, dY, dN = (float(q) for q in disturbance)
    if not all(math.isfinite(q) for q in (X, Y, N, dX, dY, dN, dt)) or not state.is_finite():
        raise ValueError("step_body received non-finite input")

    c, s = math.cos(state.yaw), math.sin(state.yaw)
    Fx = X + c * dX + s * dY
    Fy = Y - s * dX + c * dY
    m = params.mass
    du, dv = params.linear_drag
    u1 = (state.u + dt * Fx / m) / (1.0 + dt * du / m)
    v1 = (state.v + dt * Fy / m) / (1.0 + dt * dv / m)
    r1 = (state.r + dt * (N + dN) / params.yaw_inertia) / (1.0 + dt * params.yaw_drag / params.yaw_inertia)

    x1 = state.x + dt * (c * u1 - s * v1)
    y1 = state.y + dt * (s * u1 + c * v1)
    dpsi = dt * r1
    cr, sr = math.cos(dpsi), math.sin(dpsi)
    return BoatState(x1, y1, wrap_angle(state.yaw + dpsi), cr * u1 + sr * v1, -sr * u1 + cr * v1, r1)


@dataclass(frozen=True)
class DisturbanceSignal:
    """Seeded wave disturbance: two swell sinusoids plus band-limited chop.

    ``force_per_metre`` converts the positional wave amplitude into a drift
    force (N per metre of amplitude); the yaw moment uses
    ``moment_per_metre`` the same way.
    """

    wave_amplitude_pos: float = 0.0  # m
    wave_amplitude_pitch_roll: float = 0.0  # deg
    wave_period: float = 4.0  # s
    seed: int = 0
    force_per_metre: float = 400.0
    moment_per_metre: float = 40.0
    gusts: tuple = field(default=())  # (start s, duration s, fx N, fy N) in world frame

    def __post_init__(self):
        if self.wave_amplitude_pos < 0 or self.wave_amplitude_pitch_roll < 0:
            raise ValueError("disturbance amplitudes must be non-negative")
        if not self.wave_period > 0:
            raise ValueError("wave_period must be positive")

    @classmethod
    def calm(cls, seed: int = 0) -> "DisturbanceSignal":
        return cls(seed=seed)

    @classmethod
    def river(cls, seed: int = 0) -> "DisturbanceSignal":
        return cls(wave_amplitude_pos=0.01, wave_amplitude_pitch_roll=1.5, wave_period=3.0, seed=seed)


_N_CHOP = 6


@lru_cache(maxsize=64)
def _components(seed: int, period: float):
    # per channel (fx, fy, n, pitch, roll): weights, angular freqs, phases.
    # Weights of each channel sum to 1 so |channel| <= amplitude.
    rng = np.random.default_rng(seed)
    w0 = TWO_PI / period
    comps = []
    for _ in range(5):
        swell_f = w0 * np.array([1.0, rng.uniform(1.3, 1.9)])
        chop_f = w0 * rng.uniform(2.5, 6.0, _N_CHOP)
        freqs = np.concatenate([swell_f, chop_f])
        # chop weights fall off with frequency (first-order low-pass shape)
        chop_w = 0.3 / (1.0 + (chop_f / (3 * w0)) ** 2)
        weights = np.concatenate([[0.5, 0.2], chop_w * (0.3 / chop_w.sum())])
        weights = weights / weights.sum()
        phases = rng.uniform(0.0, TWO_PI, freqs.size)
        comps.append(tuple(zip(weights.tolist(), freqs.tolist(), phases.tolist())))
    return tuple(comps)


def _channel(comp, t: float) -> float:
    return sum(w * math.sin(f * t + p) for w, f, p in comp)


def sample_disturbance(sig: DisturbanceSignal, t: float) -> tuple[tuple[float, float, float], tuple[float, float]]:
    """World-frame force (fx, fy, yaw moment) and (pitch, roll) in degrees at time ``t``.

    A pure function of (signal, t).  Pitch and roll are an output-only signal;
    they never feed back into the planar dynamics.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    fx = fy = n = 0.0
    pitch = roll = 0.0
    if sig.wave_amplitude_pos > 0 or sig.wave_amplitude_pitch_roll > 0:
        cx, cy, cn, cp, cr = _components(sig.seed, sig.wave_period)
        if sig.wave_amplitude_pos > 0:
            fa = sig.wave_amplitude_pos * sig.force_per_metre
            fx = fa * _channel(cx, t)
            fy = fa * _channel(cy, t)
            n = sig.wave_amplitude_pos * sig.moment_per_metre * _channel(cn, t)
        if sig.wave_amplitude_pitch_roll > 0:
            a = sig.wave_amplitude_pitch_roll
            pitch = min(a, max(-a, a * _channel(cp, t)))
            roll = min(a, max(-a, a * _channel(cr, t)))
    for start, duration, gx, gy in sig.gusts:
        if start <= t < start + duration:
            fx += gx
            fy += gy
    return (fx, fy, n), (pitch, roll)
