"""Synthetic observations: fiducial tag pose, dipole magnetometer, IMU heading."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import BoatState, wrap_angle, wrap_deg

MU0_OVER_4PI = 1e-7  # T m / A
T_TO_UT = 1e6


class SingularityError(ValueError):
    """Magnetometer evaluated on top of a point dipole."""


@dataclass(frozen=True)
class TagObservation:
    """Pose of a tag as reported by the camera (mm, mm, degrees).

    ``d_x`` is along the camera axis, ``d_y`` lateral (positive when the tag is
    to the camera's left) and ``psi`` the yaw of the camera relative to the
    direction that faces the tag squarely (positive counter-clockwise).
    """

    d_x: float
    d_y: float
    psi: float
    tag_id: int = 0
    valid: bool = True

    @classmethod
    def invalid(cls, tag_id: int = 0) -> "TagObservation":
        return cls(math.nan, math.nan, math.nan, tag_id, False)

    def lateral_offset(self) -> float:
        """Camera offset from the tag's normal axis, in mm, expressed in the tag frame.

        Positive when the camera sits to its own right of the axis, so a sway
        to port reduces it.
        """
        p = math.radians(self.psi)
        return self.d_x * math.sin(p) + self.d_y * math.cos(p)

    def axial_distance(self) -> float:
        """Camera distance from the tag plane along the tag normal, mm."""
        p = math.radians(self.psi)
        return self.d_x * math.cos(p) - self.d_y * math.sin(p)


@dataclass(frozen=True)
class CameraModel:
    mount: tuple[float, float, float] = (0.45, 0.0, 0.0)  # body-frame x m, y m, yaw rad
    fov_deg: float = 90.0
    max_range_mm: float = 10000.0
    min_range_mm: float = 2.0
    max_incidence_deg: float = 75.0  # tag seen too obliquely is not decoded
    noise: tuple[float, float, float] = (5.0, 3.0, 0.3)  # std-dev of d_x mm, d_y mm, psi deg
    enabled: bool = True


@dataclass(frozen=True)
class MagnetSource:
    x: float  # m, world
    y: float
    heading: float  # rad, direction of the magnetic moment
    moment: float  # A m^2
    kind: str = "permanent"  # permanent | electromagnet
    powered: bool = True
    pull_force: float = 75.5  # N; recorded only, the field model does not use it

    def __post_init__(self):
        if not self.moment > 0:
            raise ValueError("dipole moment must be positive")
        if self.kind not in ("permanent", "electromagnet"):
            raise ValueError(f"unknown magnet kind {self.kind!r}")
        if self.kind == "permanent" and not self.powered:
            object.__setattr__(self, "powered", True)


@dataclass(frozen=True)
class MagnetometerReading:
    b_x: float  # uT, sensor frame
    b_y: float
    b_z: float = 0.0  # planar model: always 0
    sample_rate: float = 20.0

    @property
    def b_xy(self) -> float:
        return math.hypot(self.b_x, self.b_y)


def camera_pose(state: BoatState, mount=(0.0, 0.0, 0.0)) -> tuple[float, float, float]:
    """World pose of a camera rigidly mounted at ``mount`` on a body."""
    cx, cy = state.to_world(mount[0], mount[1])
    return cx, cy, wrap_angle(state.yaw + mount[2])


def exact_tag_pose(cam: tuple[float, float, float], tag: tuple[float, float, float]) -> tuple[float, float, float]:
    """Noise-free (d_x mm, d_y mm, psi deg) of a tag whose normal points along ``tag[2]``."""
    cx, cy, cyaw = cam
    tx, ty, tyaw = tag
    c, s = math.cos(cyaw), math.sin(cyaw)
    dx, dy = tx - cx, ty - cy
    ex = c * dx + s * dy
    ey = -s * dx + c * dy
    psi = wrap_angle(cyaw - tyaw - math.pi)
    return ex * 1000.0, ey * 1000.0, math.degrees(psi)


def observe_tag(cam, tag, noise=(0.0, 0.0, 0.0), fov_deg: float = 90.0, max_range_mm: float = 10000.0,
                rng: np.random.Generator | None = None, tag_id: int = 0, min_range_mm: float = 2.0,
                max_incidence_deg: float = 75.0) -> TagObservation:
    """Camera reading of a tag, or an invalid observation when it cannot be seen.

    ``cam`` and ``tag`` are world poses (x m, y m, heading rad); the tag heading
    is the outward normal of its printed face.
    """
    d_x, d_y, psi = exact_tag_pose(cam, tag)
    rng_mm = math.hypot(d_x, d_y)
    bearing = math.degrees(math.atan2(d_y, d_x))
    # incidence: angle between the tag normal and the line back to the camera
    incidence = wrap_deg(psi + bearing)
    if (d_x <= 0 or abs(bearing) > fov_deg / 2 or not (min_range_mm < rng_mm <= max_range_mm)
            or abs(incidence) > max_incidence_deg):
        return TagObservation.invalid(tag_id)
    if rng is not None and any(noise):
        nx, ny, npsi = rng.normal(0.0, 1.0, 3).tolist()
        d_x += noise[0] * nx
        d_y += noise[1] * ny
        psi += noise[2] * npsi
    return TagObservation(d_x, d_y, psi, tag_id, True)


def dipole_field(px: float, py: float, src: MagnetSource) -> tuple[float, float]:
    """World-frame field (T) of one point dipole at (px, py)."""
    rx, ry = px - src.x, py - src.y
    d = math.hypot(rx, ry)
    if d < 1e-3:
        raise SingularityError(f"sensor {d * 1000:.3f} mm from a dipole")
    ux, uy = rx / d, ry / d
    mx, my = src.moment * math.cos(src.heading), src.moment * math.sin(src.heading)
    mdotr = mx * ux + my * uy
    k = MU0_OVER_4PI / d ** 3
    return k * (3 * mdotr * ux - mx), k * (3 * mdotr * uy - my)


def field_at(sensor_pos, sensor_frame: float, sources) -> MagnetometerReading:
    """Summed field of all powered dipoles, in the sensor frame, in microtesla."""
    px, py = float(sensor_pos[0]), float(sensor_pos[1])
    bx = by = 0.0
    for src in sources:
        if not src.powered:
            continue
        fx, fy = dipole_field(px, py, src)
        bx += fx
        by += fy
    c, s = math.cos(sensor_frame), math.sin(sensor_frame)
    return MagnetometerReading((c * bx + s * by) * T_TO_UT, (-s * bx + c * by) * T_TO_UT, 0.0)


def calibrate_moment(on_axis_ut: float = 200.0, distance_m: float = 0.125) -> float:
    """Dipole moment whose on-axis field equals ``on_axis_ut`` at ``distance_m``."""
    return on_axis_ut / T_TO_UT * distance_m ** 3 / (2 * MU0_OVER_4PI)


def threshold_distance(moment: float, threshold_ut: float) -> float:
    """On-axis distance (m) at which a dipole's field drops to ``threshold_ut``."""
    return (2 * MU0_OVER_4PI * moment / (threshold_ut / T_TO_UT)) ** (1.0 / 3.0)


def observe_heading(state: BoatState, noise_deg: float = 0.0, rng: np.random.Generator | None = None) -> float:
    """IMU heading in degrees, (-180, 180]."""
    if not state.is_finite():
        raise ValueError("state must be finite")
    h = math.degrees(state.yaw)
    if rng is not None and noise_deg > 0:
        h += noise_deg * rng.normal()
    return wrap_deg(h)
