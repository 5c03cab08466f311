"""Thruster allocation for the four-thruster omnidirectional hull.

Thrusters 1 and 2 sit in the middle of the long edges and push along the
surge axis; thrusters 3 and 4 sit in the middle of the short edges and push
along the sway axis.  The configuration matrix maps u = (f1, f2, f3, f4) to
the body wrench tau = (X, Y, N)::

    [ 1     1     0     0   ]
    [ 0     0     1     1   ]
    [ a/2  -a/2   b/2  -b/2 ]
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SaturationError(ValueError):
    """A thruster command exceeds the per-thruster force limit."""


@dataclass(frozen=True)
class AllocationModel:
    a: float = 0.9  # m, distance between the surge (transverse) propellers
    b: float = 0.4  # m, distance between the sway (longitudinal) propellers
    f_max: float = 30.0  # N, symmetric per-thruster limit
    B: np.ndarray = field(init=False, repr=False, compare=False)
    _pinv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.f_max > 0):
            raise ValueError(f"a, b and f_max must be positive, got {self.a}, {self.b}, {self.f_max}")
        a, b = self.a, self.b
        B = np.array([
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 1.0],
            [a / 2, -a / 2, b / 2, -b / 2],
        ])
        BBt = B @ B.T
        # BB^T = diag(2, 2, (a^2 + b^2) / 2); singular only if a = b = 0
        assert np.linalg.matrix_rank(BBt) == 3
        B.setflags(write=False)
        pinv = B.T @ np.linalg.inv(BBt)
        pinv.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "_pinv", pinv)


def forces_to_wrench(model: AllocationModel, u) -> np.ndarray:
    """Body wrench (X [N], Y [N], N [N m]) produced by thruster forces ``u``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (4,):
        raise ValueError(f"expected 4 thruster forces, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("thruster forces must be finite")
    # tiny tolerance so saturated commands from wrench_to_forces pass back in
    if np.any(np.abs(u) > model.f_max * (1 + 1e-12)):
        raise SaturationError(f"thruster command {u.tolist()} exceeds f_max={model.f_max}")
    return model.B @ u


def wrench_to_forces(model: AllocationModel, tau) -> np.ndarray:
    """Minimum-norm thruster forces for ``tau``, uniformly scaled into the limits.

    Uniform scaling keeps the direction of the delivered wrench, so a saturated
    yaw-plus-surge request never turns into an unintended rotation.
    """
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (3,):
        raise ValueError(f"expected a 3-vector wrench, got shape {tau.shape}")
    if not np.all(np.isfinite(tau)):
        raise ValueError("wrench must be finite")
    u = model._pinv @ tau
    peak = np.max(np.abs(u))
    if peak > model.f_max:
        u = u * (model.f_max / peak)
    return u


def basic_motion(model: AllocationModel, motion: str, force: float = 1.0) -> np.ndarray:
    """Thruster command for one of the six basic omnidirectional motions."""
    f = abs(force)
    commands = {
        "forward": (f, f, 0.0, 0.0),
        "backward": (-f, -f, 0.0, 0.0),
        "left": (0.0, 0.0, f, f),
        "right": (0.0, 0.0, -f, -f),
        "ccw": (f, -f, 0.0, 0.0),
        "cw": (-f, f, 0.0, 0.0),
    }
    try:
        u = np.array(commands[motion])
    except KeyError:
        raise ValueError(f"unknown motion {motion!r}; expected one of {sorted(commands)}") from None
    if f > model.f_max:
        raise SaturationError(f"force {f} exceeds f_max={model.f_max}")
    return u
