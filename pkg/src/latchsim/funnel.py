"""Adaptive framed funnel: acceptance geometry, aperture actuation, compliance, receptor."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

log = logging.getLogger(__name__)

ONE_DOF = "one_dof"
TWO_DOF = "two_dof"

OPEN = "open"
CLOSED_EMPTY = "closed_empty"
CLOSED_TRAPPED = "closed_trapped"

ACCEPTED = "accepted"
REJECTED = "rejected"


class ReceptorFault(RuntimeError):
    """Receptor asked to capture while it is closed and empty."""


@dataclass(frozen=True)
class FunnelGeometry:
    cone_height: float = 110.0  # mm
    mouth_radius: float = 40.0  # mm
    stud_radius: float = 9.0  # mm
    max_offset_deg: float = 10.0  # steering offset at full asymmetry

    def __post_init__(self):
        if not (0 < self.stud_radius < self.mouth_radius):
            raise ValueError("stud radius must be positive and smaller than the mouth radius")
        if not self.cone_height > 0:
            raise ValueError("cone height must be positive")

    def acceptance_area(self) -> float:
        """Mouth area in mm^2."""
        return math.pi * self.mouth_radius ** 2

    def effective_radius(self, aperture: float) -> float:
        """Mouth radius on one side; linear from the stud radius (closed) to r (open)."""
        return self.stud_radius + aperture * (self.mouth_radius - self.stud_radius)


@dataclass(frozen=True)
class FunnelState:
    mode: str = ONE_DOF
    aperture_left: float = 1.0
    aperture_right: float = 1.0
    receptor: str = OPEN

    def __post_init__(self):
        if self.mode not in (ONE_DOF, TWO_DOF):
            raise ValueError(f"unknown funnel mode {self.mode!r}")
        if self.receptor not in (OPEN, CLOSED_EMPTY, CLOSED_TRAPPED):
            raise ValueError(f"unknown receptor state {self.receptor!r}")


@dataclass(frozen=True)
class LatchEvent:
    time: float = 0.0
    d_x: float = math.nan
    d_y: float = math.nan
    yaw_rel: float = math.nan


def acceptance_check(geom: FunnelGeometry, state: FunnelState, stud_offset) -> str:
    """Whether a stud arriving at the mouth with ``stud_offset`` (lateral, vertical mm) fits.

    Positive lateral offsets are on the left half of the funnel.  The stud
    centre must sit within the effective radius of its side minus the stud
    radius.
    """
    lat, vert = float(stud_offset[0]), float(stud_offset[1])
    aperture = state.aperture_left if lat >= 0 else state.aperture_right
    clearance = geom.effective_radius(aperture) - geom.stud_radius
    # 1e-9 mm slack absorbs float noise exactly on the boundary
    return ACCEPTED if math.hypot(lat, vert) <= clearance + 1e-9 else REJECTED


def set_aperture(state: FunnelState, left: float, right: float) -> FunnelState:
    for name, val in (("left", left), ("right", right)):
        if not (0.0 <= val <= 1.0):
            raise ValueError(f"{name} aperture {val} outside [0, 1]")
    if state.mode == ONE_DOF:
        if right != left:
            log.debug("one_dof funnel: right aperture %.3f ignored, following left %.3f", right, left)
        return replace(state, aperture_left=left, aperture_right=left)
    return replace(state, aperture_left=left, aperture_right=right)


def receptor_event(state: FunnelState, stud_at_socket: bool = False, release: bool = False,
                   time: float = 0.0, latch_pose=(math.nan, math.nan, math.nan)
                   ) -> tuple[FunnelState, Optional[LatchEvent]]:
    """Push-lock receptor transitions.

    open + stud        -> closed_trapped, emits a LatchEvent
    closed_trapped + release -> open
    closed_empty + release   -> open
    closed_empty + stud      -> ReceptorFault
    anything else            -> unchanged
    """
    if release:
        if state.receptor in (CLOSED_TRAPPED, CLOSED_EMPTY):
            return replace(state, receptor=OPEN), None
        return state, None
    if stud_at_socket:
        if state.receptor == OPEN:
            d_x, d_y, yaw_rel = latch_pose
            return replace(state, receptor=CLOSED_TRAPPED), LatchEvent(time, d_x, d_y, yaw_rel)
        if state.receptor == CLOSED_EMPTY:
            raise ReceptorFault("stud arrived at a receptor that is closed and empty")
    return state, None


def close_receptor(state: FunnelState) -> FunnelState:
    """Close an open receptor with nothing inside it."""
    if state.receptor == OPEN:
        return replace(state, receptor=CLOSED_EMPTY)
    return state


def steering_offset(state: FunnelState, geom: FunnelGeometry = FunnelGeometry()) -> float:
    """Heading offset (deg) the funnel imposes on a trapped pin; positive turns it to port."""
    if state.receptor != CLOSED_TRAPPED:
        raise ValueError("steering offset needs a trapped stud")
    if state.mode == ONE_DOF:
        return 0.0
    return geom.max_offset_deg * (state.aperture_left - state.aperture_right)


def apertures_for_offset(offset_deg: float, geom: FunnelGeometry = FunnelGeometry(),
                         mean: float = 0.5) -> tuple[float, float]:
    """Inverse of :func:`steering_offset` around a mean aperture."""
    half = 0.5 * offset_deg / geom.max_offset_deg
    half = max(-min(mean, 1 - mean), min(min(mean, 1 - mean), half))
    return mean + half, mean - half


# -- two-mass compliance ------------------------------------------------------


@dataclass(frozen=True)
class ComplianceParams:
    M_s: float = 0.5
    M_us: float = 0.2
    M_s_opp: float = 0.5
    M_us_opp: float = 0.2
    k_s: float = 2000.0
    b_s: float = 40.0
    k_t: float = 8000.0
    # True: the actuator term enters the damper exactly as b_s*(xdot_s - f).
    # False: conventional reading, relative damper b_s*(xdot_s - xdot_us) plus f as a force.
    force_as_velocity_input: bool = True

    def __post_init__(self):
        if min(self.M_s, self.M_us, self.M_s_opp, self.M_us_opp) <= 0:
            raise ValueError("compliance masses must be positive")
        if not (self.k_s > 0 and self.k_t > 0) or self.b_s < 0:
            raise ValueError("k_s, k_t must be positive and b_s non-negative")


@dataclass(frozen=True)
class ComplianceState:
    x_s: float = 0.0
    x_us: float = 0.0
    xd_s: float = 0.0
    xd_us: float = 0.0
    x_s_opp: float = 0.0
    x_us_opp: float = 0.0
    xd_s_opp: float = 0.0
    xd_us_opp: float = 0.0
    r_input: float = 0.0
    f: float = 0.0
    f_opp: float = 0.0

    def values(self):
        return (self.x_s, self.x_us, self.xd_s, self.xd_us,
                self.x_s_opp, self.x_us_opp, self.xd_s_opp, self.xd_us_opp)


def compliance_accel(ms, mus, ks, bs, kt, xs, xus, vs, vus, r, f, verbatim=True):
    """Accelerations of the sprung/unsprung pair for one arm."""
    if verbatim:
        as_ = (-ks * (xs - xus) - bs * (vs - f)) / ms
        aus = (ks * (xs - xus) - bs * (f - vs) - kt * (xus - r)) / mus
    else:
        as_ = (-ks * (xs - xus) - bs * (vs - vus) + f) / ms
        aus = (ks * (xs - xus) + bs * (vs - vus) - kt * (xus - r) - f) / mus
    return as_, aus


def _damping(bs, verbatim):
    """Damper matrix C (force = -C v) on (v_s, v_us)."""
    if verbatim:
        # s feels -b_s v_s and us feels +b_s v_s; the f terms are constant inputs
        return bs, 0.0, -bs, 0.0
    return bs, -bs, -bs, bs


def _arm_step(ms, mus, ks, bs, kt, xs, xus, vs, vus, r, f, dt, verbatim):
    # springs explicit, dampers trapezoidal: (M + dt/2 C) v1 = (M - dt/2 C) v0 + dt F(x)
    c11, c12, c21, c22 = _damping(bs, verbatim)
    h = 0.5 * dt
    d = ks * (xs - xus)
    if verbatim:
        f1, f2 = -d + bs * f, d - bs * f - kt * (xus - r)
    else:
        f1, f2 = -d + f, d - kt * (xus - r) - f
    r1 = ms * vs - h * (c11 * vs + c12 * vus) + dt * f1
    r2 = mus * vus - h * (c21 * vs + c22 * vus) + dt * f2
    a11, a12, a21, a22 = ms + h * c11, h * c12, h * c21, mus + h * c22
    det = a11 * a22 - a12 * a21
    vs1 = (a22 * r1 - a12 * r2) / det
    vus1 = (a11 * r2 - a21 * r1) / det
    return xs + dt * vs1, xus + dt * vus1, vs1, vus1


def step_compliance(params: ComplianceParams, state: ComplianceState, r_input: float,
                    f: float, f_opp: float, dt: float) -> ComplianceState:
    """Semi-implicit Euler step of both arm pairs driven by the pin offset ``r_input``.

    Velocities first (springs explicit, dampers trapezoidal), then positions
    from the new velocities.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    vals = state.values() + (r_input, f, f_opp)
    if not all(math.isfinite(q) for q in vals):
        raise ValueError("non-finite compliance state or input")
    p = params
    verbatim = p.force_as_velocity_input
    a = _arm_step(p.M_s, p.M_us, p.k_s, p.b_s, p.k_t, state.x_s, state.x_us, state.xd_s, state.xd_us,
                  r_input, f, dt, verbatim)
    b = _arm_step(p.M_s_opp, p.M_us_opp, p.k_s, p.b_s, p.k_t, state.x_s_opp, state.x_us_opp, state.xd_s_opp,
                  state.xd_us_opp, r_input, f_opp, dt, verbatim)
    return ComplianceState(*a, *b, r_input, f, f_opp)


def compliance_energy(params: ComplianceParams, state: ComplianceState, r_input: float,
                      dt: Optional[float] = None) -> float:
    """Kinetic plus spring energy of both arm pairs (J), taking f = 0.

    With ``dt`` the integrator's own energy is returned instead: the quadratic
    form that :func:`step_compliance` conserves exactly without damping and
    never increases under the conventional (symmetric) damper.  It differs from
    the mechanical energy by O(dt).
    """
    p, s = params, state
    total = 0.0
    for xs, xus, vs, vus, ms, mus in ((s.x_s, s.x_us, s.xd_s, s.xd_us, p.M_s, p.M_us),
                                      (s.x_s_opp, s.x_us_opp, s.xd_s_opp, s.xd_us_opp, p.M_s_opp, p.M_us_opp)):
        total += (0.5 * ms * vs ** 2 + 0.5 * mus * vus ** 2
                  + 0.5 * p.k_s * (xs - xus) ** 2 + 0.5 * p.k_t * (xus - r_input) ** 2)
        if dt is not None:
            # -dt/2 v^T K (x - x_eq), with x_eq = (r, r)
            fs = p.k_s * (xs - xus)
            fus = -p.k_s * (xs - xus) + p.k_t * (xus - r_input)
            total -= 0.5 * dt * (vs * fs + vus * fus)
    return total
