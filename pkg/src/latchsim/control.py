"""Driving, magnetic guiding, visual latching and towing controllers.

Every controller here is a pure function of its inputs; the latching state
machine carries its memory in :class:`LatchControllerState`, so replaying a
logged observation sequence reproduces the command sequence exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

from .dynamics import BoatState, wrap_angle, wrap_deg
from .funnel import ONE_DOF, TWO_DOF, FunnelGeometry, FunnelState, apertures_for_offset
from .sensors import MagnetometerReading, TagObservation

ALIGN = "align"
APPROACH = "approach"
BACKOFF = "backoff"
RETRY = "retry"
LATCHED = "latched"
PHASES = (ALIGN, APPROACH, BACKOFF, RETRY, LATCHED)

INACTIVE = "INACTIVE"
MOVE_TOWARDS = "MOVE_TOWARDS"
FIND = "FIND"

PERMITTED = "permitted"
NOT_PERMITTED = "not_permitted"


@dataclass(frozen=True)
class ControllerThresholds:
    guiding_activation_d: float = 125.0  # mm
    mag_threshold: float = 50.0  # uT
    dy_tol: float = 10.0  # mm
    psi_tol: float = 2.0  # deg
    retry_backoff: float = 1.0  # m
    latch_gate_dx: float = 900.0  # mm
    latch_gate_dy: float = 40.0  # mm
    latch_gate_yaw: float = 27.5  # deg
    # target-side references: camera d_x with the stud seated in the socket,
    # and the pin length used to project the stud into the funnel frame
    dx_latch: float = 0.0  # mm
    pin_length: float = 0.0  # mm
    push_through: float = 30.0  # mm past the socket the approach aims for
    retry_margin: float = 200.0  # mm beyond retry_backoff the retry aims for
    invalid_timeout: float = 2.0  # s without a valid tag before retrying
    dx_ref: float = 1000.0  # mm
    aperture_alpha: float = 0.5
    aperture_beta: float = 0.5

    def __post_init__(self):
        for name in ("guiding_activation_d", "mag_threshold", "dy_tol", "psi_tol", "retry_backoff",
                     "latch_gate_dx", "latch_gate_dy", "latch_gate_yaw", "invalid_timeout", "dx_ref"):
            if not getattr(self, name) > 0:
                raise ValueError(f"threshold {name} must be positive")


@dataclass(frozen=True)
class PdGains:
    # lateral (Control I), longitudinal (Control II), angle (Control III), funnel (Control IV)
    kp_dy: float = 60.0  # N/m
    kd_dy: float = 90.0  # N s/m
    kp_dx: float = 40.0  # N/m
    kd_dx: float = 60.0  # N s/m
    kp_psi: float = 6.0  # N m/rad
    kd_psi: float = 4.0  # N m s/rad
    kp_aperture: float = 2.0  # 1/s
    kd_aperture: float = 0.0
    max_dx_error: float = 0.3  # m, saturates the longitudinal P term (sets cruise speed)
    max_dy_error: float = 0.15  # m
    derivative_smoothing: float = 0.3  # EMA weight of the newest finite difference

    def __post_init__(self):
        for name, val in vars(self).items():
            if val < 0:
                raise ValueError(f"gain {name} must be non-negative")


@dataclass(frozen=True)
class LatchControllerState:
    phase: str = ALIGN
    flag_missed_target: int = 0
    aperture_cmd: float = 1.0
    standoff: float = math.nan  # mm, d_x target while backing off
    period: float = 0.05  # s, control period
    time: float = 0.0
    invalid_time: float = 0.0
    prev_err: Optional[tuple] = None  # (lateral m, longitudinal m, psi rad) at the last valid step
    rates: tuple = (0.0, 0.0, 0.0)


def _clip(x: float, lim: float) -> float:
    return max(-lim, min(lim, x))


def _clamp01(x: float) -> float:
    return max(0.0, min(1.0, x))


def latch_gate(d_x: float, d_y: float, yaw_rel: float, th: ControllerThresholds = ControllerThresholds()) -> str:
    """Capture is permitted only strictly inside the (d_x, |d_y|, |yaw|) gate."""
    ok = d_x < th.latch_gate_dx and abs(d_y) < th.latch_gate_dy and abs(yaw_rel) < th.latch_gate_yaw
    return PERMITTED if ok else NOT_PERMITTED


def aperture_law(d_x: float, d_y: float, th: ControllerThresholds) -> float:
    """Funnel opening proportional to both the remaining distance and the lateral error."""
    return _clamp01(th.aperture_alpha * d_x / th.dx_ref + th.aperture_beta * abs(d_y) / th.dy_tol)


def driving_step(state: BoatState, goal, gains: PdGains = PdGains(), max_force: float = 20.0,
                 max_moment: float = 6.0) -> tuple[float, float, float]:
    """PD on world position error and yaw error, returned as a body-frame wrench."""
    gx, gy, gyaw = (float(q) for q in goal)
    if not all(math.isfinite(q) for q in (gx, gy, gyaw)):
        raise ValueError("goal must be finite")
    ex, ey = state.to_body(gx, gy)
    X = gains.kp_dx * _clip(ex, gains.max_dx_error) - gains.kd_dx * state.u
    Y = gains.kp_dy * _clip(ey, gains.max_dy_error) - gains.kd_dy * state.v
    N = gains.kp_psi * wrap_angle(gyaw - state.yaw) - gains.kd_psi * state.r
    norm = math.hypot(X, Y)
    if norm > max_force:
        X, Y = X * max_force / norm, Y * max_force / norm
    return X, Y, _clip(N, max_moment)


@dataclass(frozen=True)
class GuidingGains:
    sway: float = 15.0  # N at a fully lateral field
    sway_damping: float = 60.0  # N s/m
    creep: float = 2.0  # N surge while closing in
    surge_damping: float = 40.0
    stop_distance: float = 40.0  # mm, stop creeping
    search_force: float = 3.0
    search_period: float = 6.0  # s
    kp_heading: float = 6.0  # N m/rad
    kd_heading: float = 4.0


class GuidingCommand(NamedTuple):
    mode: str
    wrench: Optional[tuple]


def guiding_step(reading: MagnetometerReading, d_estimate: float, th: ControllerThresholds = ControllerThresholds(),
                 peer_heading: Optional[float] = None, heading: Optional[float] = None,
                 velocity: Optional[tuple] = None, t: float = 0.0,
                 gains: GuidingGains = GuidingGains()) -> GuidingCommand:
    """Magnetometer-based final guidance inside the activation radius.

    Sign convention: the target magnet's moment points away from the
    approaching sensor, so a positive sensor-frame ``b_y`` means the magnet
    lies to port and the sway command takes the sign of ``b_y``.
    ``velocity`` (u, v, r) adds damping when given; ``heading`` and
    ``peer_heading`` are degrees.
    """
    if d_estimate > th.guiding_activation_d:
        return GuidingCommand(INACTIVE, None)
    u, v, r = velocity if velocity is not None else (0.0, 0.0, 0.0)
    N = 0.0
    if peer_heading is not None:
        own = heading if heading is not None else 0.0
        N = gains.kp_heading * math.radians(wrap_deg(peer_heading - own)) - gains.kd_heading * r
    bxy = reading.b_xy
    if bxy >= th.mag_threshold:
        lateral = reading.b_y / bxy
        Y = gains.sway * lateral - gains.sway_damping * v
        # creep scales with the field's axial cosine: ahead of the magnet the field points
        # forward, beside it the field points back and the robot retreats into the axial cone
        axial = reading.b_x / bxy
        creep = gains.creep * axial if (d_estimate > gains.stop_distance or axial < 0) else 0.0
        X = creep - gains.surge_damping * u
        return GuidingCommand(MOVE_TOWARDS, (X, Y, N))
    Y = gains.search_force * math.sin(2 * math.pi * t / gains.search_period) - gains.sway_damping * v
    return GuidingCommand(FIND, (-gains.surge_damping * u, Y, N))


def _errors(obs: TagObservation, th: ControllerThresholds):
    psi = math.radians(obs.psi)
    lateral = (obs.d_y + th.pin_length * math.sin(psi)) / 1000.0  # stud offset from the funnel axis
    return lateral, (obs.d_x - th.dx_latch) / 1000.0, psi


def latching_step(obs: TagObservation, ctrl: LatchControllerState,
                  th: ControllerThresholds = ControllerThresholds(), gains: PdGains = PdGains()):
    """One tick of the hybrid visual latching controller.

    Returns ``(wrench, aperture_command, new_state)``.  ``wrench`` is None when
    there is no valid tag: the caller falls back to driving or magnetic guiding.

    Branches, evaluated on dx = d_x - dx_latch:
      flag 0, dx > 0, |d_y| < dy_tol or |psi| < psi_tol -> approach, close the funnel
      flag 0, dx > 0, otherwise                          -> back off 1 m, open the funnel
      flag 0, dx <= 0 (no capture)                       -> flag = 1
      flag 1 -> return beyond retry_backoff; clear the flag once dx > retry_backoff
    Lateral error and angle are minimised in every branch.
    """
    t = ctrl.time + ctrl.period
    if ctrl.phase == LATCHED:
        return (0.0, 0.0, 0.0), ctrl.aperture_cmd, replace(ctrl, time=t)

    if not obs.valid:
        invalid = ctrl.invalid_time + ctrl.period
        phase = ctrl.phase
        if phase in (APPROACH, BACKOFF) and invalid > th.invalid_timeout:
            phase = RETRY
        return None, ctrl.aperture_cmd, replace(ctrl, phase=phase, time=t, invalid_time=invalid,
                                                prev_err=None, rates=(0.0, 0.0, 0.0))

    lat, dx, psi = _errors(obs, th)
    if ctrl.prev_err is None:
        rates = (0.0, 0.0, 0.0)
    else:
        a = gains.derivative_smoothing
        raw = ((lat - ctrl.prev_err[0]) / ctrl.period, (dx - ctrl.prev_err[1]) / ctrl.period,
               (psi - ctrl.prev_err[2]) / ctrl.period)
        rates = tuple(a * n + (1 - a) * o for n, o in zip(raw, ctrl.rates))

    flag = ctrl.flag_missed_target
    phase = ctrl.phase
    standoff = ctrl.standoff
    aperture = ctrl.aperture_cmd
    dx_mm = obs.d_x - th.dx_latch
    target_dx = 0.0

    if flag == 0:
        if dx_mm > 0:
            if abs(obs.d_y) < th.dy_tol or abs(obs.psi) < th.psi_tol:
                phase = APPROACH
                target_dx = -th.push_through / 1000.0
                aperture = min(aperture, aperture_law(obs.d_x, obs.d_y, th))
            else:
                if phase != BACKOFF:
                    standoff = dx_mm + th.retry_backoff * 1000.0
                phase = BACKOFF
                target_dx = standoff / 1000.0
                aperture = max(aperture, aperture_law(obs.d_x, obs.d_y, th))
        else:
            flag = 1
    if flag == 1:
        phase = RETRY
        target_dx = (th.retry_backoff * 1000.0 + th.retry_margin) / 1000.0
        aperture = 1.0
        if dx_mm > th.retry_backoff * 1000.0:
            flag = 0

    X = gains.kp_dx * _clip(dx - target_dx, gains.max_dx_error) + gains.kd_dx * rates[1]
    Y = gains.kp_dy * _clip(lat, gains.max_dy_error) + gains.kd_dy * rates[0]
    N = -gains.kp_psi * psi - gains.kd_psi * rates[2]
    new = replace(ctrl, phase=phase, flag_missed_target=flag, aperture_cmd=aperture, standoff=standoff,
                  time=t, invalid_time=0.0, prev_err=(lat, dx, psi), rates=rates)
    return (X, Y, N), aperture, new


def on_latch(ctrl: LatchControllerState) -> LatchControllerState:
    return replace(ctrl, phase=LATCHED, flag_missed_target=0, aperture_cmd=0.0)


def on_release(ctrl: LatchControllerState) -> LatchControllerState:
    return replace(ctrl, phase=ALIGN, flag_missed_target=0, aperture_cmd=1.0, prev_err=None,
                   rates=(0.0, 0.0, 0.0), standoff=math.nan)


def towing_step(mode: str, obs: TagObservation, desired_offset: float, funnel: FunnelState,
                geom: FunnelGeometry = FunnelGeometry(), drive=(0.0, 0.0, 0.0), correction_gain: float = 0.5):
    """Funnel command while towing; returns ``(wrench, (aperture_left, aperture_right))``.

    The drive wrench from the path follower passes through unchanged.  One-DoF
    towing clamps the funnel shut on the pin.  Two-DoF towing sets asymmetric
    apertures for ``desired_offset`` (deg) and trims them from the tag angle.
    """
    if mode == ONE_DOF:
        if desired_offset != 0:
            raise ValueError("a one_dof funnel cannot hold a heading offset")
        return tuple(drive), (0.0, 0.0)
    if mode != TWO_DOF:
        raise ValueError(f"unknown funnel mode {mode!r}")
    command = desired_offset
    if obs.valid:
        # relative yaw of the towed body is the negated tag angle
        command += correction_gain * (desired_offset - (-obs.psi))
    return tuple(drive), apertures_for_offset(command, geom)
