"""Fixed-step scenario engine: bodies, sensors, controllers, capture and the latch joint."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import control as ctl
from .allocation import AllocationModel, forces_to_wrench, wrench_to_forces
from .control import (
    ControllerThresholds,
    GuidingGains,
    LatchControllerState,
    PdGains,
    driving_step,
    guiding_step,
    latch_gate,
    latching_step,
    on_latch,
    on_release,
    towing_step,
)
from .dynamics import BoatState, BodyParams, DisturbanceSignal, sample_disturbance, step_body, wrap_angle, wrap_deg
from .funnel import (
    ACCEPTED,
    ONE_DOF,
    TWO_DOF,
    ComplianceParams,
    ComplianceState,
    FunnelGeometry,
    FunnelState,
    acceptance_check,
    receptor_event,
    set_aperture,
    steering_offset,
    step_compliance,
)
from .sensors import (
    CameraModel,
    MagnetSource,
    TagObservation,
    camera_pose,
    exact_tag_pose,
    field_at,
    observe_heading,
    observe_tag,
)

log = logging.getLogger(__name__)

FREE_SPHERICAL = "free_spherical"
RIGID_HOLD = "rigid_hold"
OFFSET_HOLD = "offset_hold"

MAX_JOINT_VIOLATION = 0.05  # m


class ScenarioError(ValueError):
    """Scenario failed validation; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class SolverFault(RuntimeError):
    """The joint solver met a violation too large to project away."""


# -- scenario description (SI units) ------------------------------------------


@dataclass(frozen=True)
class BodySpec:
    id: str
    kind: str  # robot | dummy | dock
    pose: tuple[float, float, float]  # m, m, rad
    params: BodyParams = BodyParams()
    station_keeping: bool = False  # actuated target holding its initial pose

    @property
    def static(self) -> bool:
        return self.kind == "dock"

    @property
    def actuated(self) -> bool:
        return self.kind == "robot"


@dataclass(frozen=True)
class TagSpec:
    id: int
    body: str
    offset: tuple[float, float, float]  # body frame, heading of the tag normal


@dataclass(frozen=True)
class MagnetSpec:
    body: str
    offset: tuple[float, float, float]  # body frame; heading of the moment
    moment: float
    kind: str = "permanent"
    powered: bool = True


@dataclass(frozen=True)
class LatchSpec:
    robot: str
    target: str
    tag_id: int
    funnel_mode: str = ONE_DOF
    mouth: tuple[float, float] = (0.5, 0.0)  # m, robot body frame; funnel axis along +x
    pin_length: float = 0.15  # m, stud centre ahead of the tag along its normal
    approach: str = "visual"  # visual | magnetic
    magnetometer: tuple[float, float] = (0.38, 0.0)
    trigger_depth: float = 20.0  # mm from the socket at which the push-lock fires
    joint_mode: Optional[str] = None  # override the joint mode picked from the funnel mode
    standoff: float = 1.5  # m, driving waypoint in front of the tag


@dataclass(frozen=True)
class TowingSpec:
    enabled: bool = True
    desired_offset: float = 0.0  # deg
    speed: float = 0.15  # m/s
    start_delay: float = 2.0  # s after capture


@dataclass(frozen=True)
class Scenario:
    name: str
    bodies: tuple[BodySpec, ...]
    tags: tuple[TagSpec, ...]
    latch: LatchSpec
    magnets: tuple[MagnetSpec, ...] = ()
    disturbance: DisturbanceSignal = DisturbanceSignal()
    thresholds: ControllerThresholds = ControllerThresholds()
    gains: PdGains = PdGains()
    guiding: GuidingGains = GuidingGains()
    camera: CameraModel = CameraModel()
    geometry: FunnelGeometry = FunnelGeometry()
    compliance: ComplianceParams = ComplianceParams()
    allocation: AllocationModel = AllocationModel()
    towing: TowingSpec = TowingSpec()
    duration: float = 60.0
    dt: float = 0.001
    control_period: float = 0.05
    seed: int = 0
    heading_noise: float = 0.0  # deg
    localization_noise: float = 0.0  # m, std-dev on driving goals and guiding range
    coupling_factor: float = 0.3  # post-latch pitch/roll transmitted to the robot
    actuator_force_gain: float = 0.0  # N per unit of funnel closure fed to the compliance model
    aperture_rate: float = 1.0  # 1/s, funnel actuator speed limit
    release_at: Optional[float] = None

    def body(self, bid: str) -> BodySpec:
        for b in self.bodies:
            if b.id == bid:
                return b
        raise KeyError(bid)

    def tag(self, tag_id: int) -> TagSpec:
        for t in self.tags:
            if t.id == tag_id:
                return t
        raise KeyError(tag_id)

    @property
    def steps_per_control(self) -> int:
        return int(round(self.control_period / self.dt))

    def validate(self) -> "Scenario":
        if not self.dt > 0:
            raise ScenarioError("must be positive", "dt")
        if not self.control_period > 0:
            raise ScenarioError("must be positive", "control_period")
        n = self.control_period / self.dt
        if abs(n - round(n)) > 1e-6 or round(n) < 1:
            raise ScenarioError(f"dt={self.dt} does not divide control_period={self.control_period}", "dt")
        if self.duration < 0:
            raise ScenarioError("must be non-negative", "duration")
        ids = [b.id for b in self.bodies]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise ScenarioError(f"duplicate body id {dup[0]!r}", "bodies.id")
        tag_ids = [t.id for t in self.tags]
        if len(set(tag_ids)) != len(tag_ids):
            raise ScenarioError("duplicate tag id", "tags.id")
        for t in self.tags:
            if t.body not in ids:
                raise ScenarioError(f"tag {t.id} on unknown body {t.body!r}", "tags.body")
        for m in self.magnets:
            if m.body not in ids:
                raise ScenarioError(f"magnet on unknown body {m.body!r}", "magnets.body")
        L = self.latch
        if L.robot not in ids:
            raise ScenarioError(f"unknown robot {L.robot!r}", "latch.robot")
        if L.target not in ids:
            raise ScenarioError(f"unknown target {L.target!r}", "latch.target")
        if L.robot == L.target:
            raise ScenarioError("robot and target must differ", "latch.target")
        if self.body(L.robot).kind != "robot":
            raise ScenarioError("the latching body must be a robot", "latch.robot")
        if L.tag_id not in tag_ids:
            raise ScenarioError(f"tag {L.tag_id} not placed", "latch.tag_id")
        if self.tag(L.tag_id).body != L.target:
            raise ScenarioError(f"tag {L.tag_id} is not on the target", "latch.tag_id")
        if L.funnel_mode not in (ONE_DOF, TWO_DOF):
            raise ScenarioError(f"unknown funnel mode {L.funnel_mode!r}", "latch.funnel_mode")
        if L.approach not in ("visual", "magnetic"):
            raise ScenarioError(f"unknown approach {L.approach!r}", "latch.approach")
        if L.joint_mode not in (None, FREE_SPHERICAL, RIGID_HOLD, OFFSET_HOLD):
            raise ScenarioError(f"unknown joint mode {L.joint_mode!r}", "latch.joint_mode")
        if L.approach == "magnetic" and not self.magnets:
            raise ScenarioError("magnetic approach needs at least one magnet", "magnets")
        if L.funnel_mode == ONE_DOF and self.towing.desired_offset != 0:
            raise ScenarioError("a one_dof funnel cannot tow with a heading offset", "towing.desired_offset")
        _check_overlap(self.bodies)
        return self


def _hull_polygon(b: BodySpec):
    from shapely.geometry import Polygon

    L, W = b.params.hull_dims[0] / 2000.0, b.params.hull_dims[1] / 2000.0
    st = BoatState(*b.pose)
    return Polygon([st.to_world(px, py) for px, py in ((L, W), (-L, W), (-L, -W), (L, -W))])


def _check_overlap(bodies) -> None:
    polys = [(b.id, _hull_polygon(b)) for b in bodies]
    for i, (ia, pa) in enumerate(polys):
        for ib, pb in polys[i + 1:]:
            if pa.intersects(pb):
                raise ScenarioError(f"bodies {ia!r} and {ib!r} overlap", "bodies")


# -- joint ----------------------------------------------------------------------


@dataclass(frozen=True)
class JointConstraint:
    parent: str
    child: str
    parent_anchor: tuple[float, float]  # mm, parent body frame
    child_anchor: tuple[float, float]  # mm, child body frame
    mode: str = FREE_SPHERICAL
    offset: float = 0.0  # deg, relative yaw target for rigid/offset hold
    iterations: int = 4


def _solve(K, rhs):
    """Cramer's rule for the 2x2 / 3x3 effective-mass systems."""
    if len(rhs) == 2:
        (a, b), (c, d) = K
        det = a * d - b * c
        return ((d * rhs[0] - b * rhs[1]) / det, (-c * rhs[0] + a * rhs[1]) / det)
    (a, b, c), (d, e, f), (g, h, i) = K
    A, B, C = e * i - f * h, -(d * i - f * g), d * h - e * g
    det = a * A + b * B + c * C
    r0, r1, r2 = rhs
    x = (r0 * A + r1 * (c * h - b * i) + r2 * (b * f - c * e)) / det
    y = (r0 * B + r1 * (a * i - c * g) + r2 * (c * d - a * f)) / det
    z = (r0 * C + r1 * (b * g - a * h) + r2 * (a * e - b * d)) / det
    return (x, y, z)


def _levers(thp, thc, rp, rc):
    cp, sp = math.cos(thp), math.sin(thp)
    cc, sc = math.cos(thc), math.sin(thc)
    return (cp * rp[0] - sp * rp[1], sp * rp[0] + cp * rp[1],
            cc * rc[0] - sc * rc[1], sc * rc[0] + cc * rc[1])


# Jacobian rows (q = xp, yp, thp, xc, yc, thc):
#   anchor x: (-1, 0,  spy, 1, 0, -scy)
#   anchor y: ( 0,-1, -spx, 0, 1,  scx)
#   angle:    ( 0, 0,   -1, 0, 0,    1)
def _k_matrix(lv, w, angular):
    spx, spy, scx, scy = lv
    mp, ip, mc, ic = w[0], w[2], w[3], w[5]
    kxx = mp + mc + ip * spy * spy + ic * scy * scy
    kxy = -ip * spy * spx - ic * scy * scx
    kyy = mp + mc + ip * spx * spx + ic * scx * scx
    if not angular:
        return ((kxx, kxy), (kxy, kyy))
    kxa = -ip * spy - ic * scy
    kya = ip * spx + ic * scx
    return ((kxx, kxy, kxa), (kxy, kyy, kya), (kxa, kya, ip + ic))


def _apply(q, lv, w, lam):
    spx, spy, scx, scy = lv
    lx, ly = lam[0], lam[1]
    la = lam[2] if len(lam) == 3 else 0.0
    return [q[0] - w[0] * lx, q[1] - w[1] * ly, q[2] + w[2] * (spy * lx - spx * ly - la),
            q[3] + w[3] * lx, q[4] + w[4] * ly, q[5] + w[5] * (-scy * lx + scx * ly + la)]


def _jv(v, lv, angular):
    spx, spy, scx, scy = lv
    out = [-v[0] + spy * v[2] + v[3] - scy * v[5], -v[1] - spx * v[2] + v[4] + scx * v[5]]
    if angular:
        out.append(v[5] - v[2])
    return out


def _inverse_masses(p: BodyParams, static: bool):
    if static:
        return (0.0, 0.0, 0.0)
    return (1.0 / p.mass, 1.0 / p.mass, 1.0 / p.yaw_inertia)


def apply_joint(parent: BoatState, child: BoatState, j: JointConstraint, dt: float,
                parent_params: BodyParams = BodyParams(), child_params: BodyParams = BodyParams(),
                parent_static: bool = False, child_static: bool = False):
    """Project two bodies back onto the joint manifold.

    Positions are corrected first (anchors coincide; relative yaw fixed for the
    hold modes), then velocities are made consistent with the constraint by
    equal and opposite impulses.  Returns ``(parent, child, force)`` where
    ``force`` is the constraint impulse on the child divided by ``dt``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    w = _inverse_masses(parent_params, parent_static) + _inverse_masses(child_params, child_static)
    if sum(w) == 0:
        raise SolverFault("joint between two static bodies")
    rp = (j.parent_anchor[0] / 1000.0, j.parent_anchor[1] / 1000.0)
    rc = (j.child_anchor[0] / 1000.0, j.child_anchor[1] / 1000.0)
    angular = j.mode in (RIGID_HOLD, OFFSET_HOLD)
    target = math.radians(j.offset)

    q = [parent.x, parent.y, parent.yaw, child.x, child.y, child.yaw]

    def residual(q, lv):
        C = [(q[3] + lv[2]) - (q[0] + lv[0]), (q[4] + lv[3]) - (q[1] + lv[1])]
        if angular:
            C.append(wrap_angle(q[5] - q[2] - target))
        return C

    lv = _levers(q[2], q[5], rp, rc)
    C = residual(q, lv)
    violation = math.hypot(C[0], C[1])
    if violation > MAX_JOINT_VIOLATION:
        raise SolverFault(f"joint violation {violation * 1000:.1f} mm exceeds {MAX_JOINT_VIOLATION * 1000:.0f} mm")
    for _ in range(j.iterations):
        if max(abs(c) for c in C) < 1e-13:
            break
        lam = _solve(_k_matrix(lv, w, angular), [-c for c in C])
        q = _apply(q, lv, w, lam)
        lv = _levers(q[2], q[5], rp, rc)
        C = residual(q, lv)

    pvx, pvy = parent.velocity_world()
    cvx, cvy = child.velocity_world()
    v = [pvx, pvy, parent.r, cvx, cvy, child.r]
    lam = _solve(_k_matrix(lv, w, angular), [-x for x in _jv(v, lv, angular)])
    v = _apply(v, lv, w, lam)

    def rebuild(x, y, yaw, vx, vy, r):
        yaw = wrap_angle(yaw)
        c, s = math.cos(yaw), math.sin(yaw)
        return BoatState(x, y, yaw, c * vx + s * vy, -s * vx + c * vy, r)

    new_parent = parent if parent_static else rebuild(q[0], q[1], q[2], v[0], v[1], v[2])
    new_child = child if child_static else rebuild(q[3], q[4], q[5], v[3], v[4], v[5])
    force = (lam[0] / dt, lam[1] / dt, (lam[2] / dt) if angular else 0.0)
    return new_parent, new_child, force


def linear_momentum(states, params) -> tuple[float, float]:
    px = py = 0.0
    for s, p in zip(states, params):
        vx, vy = s.velocity_world()
        px += p.mass * vx
        py += p.mass * vy
    return px, py


# -- event log and metrics -----------------------------------------------------


class EventLog:
    """Time-ordered list of plain-dict records; every record has ``t`` and ``type``."""

    def __init__(self, records=None):
        self.records: list[dict] = []
        for rec in records or ():
            self.append(rec["t"], rec["type"], **{k: v for k, v in rec.items() if k not in ("t", "type")})

    def append(self, t: float, kind: str, **data) -> None:
        if self.records and t < self.records[-1]["t"]:
            raise ValueError(f"event at t={t} precedes t={self.records[-1]['t']}")
        rec = {"t": t, "type": kind}
        rec.update(data)
        self.records.append(rec)

    def of_type(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["type"] == kind]

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other) -> bool:
        # compare serialized forms so NaN fields (invalid observations) compare equal
        return isinstance(other, EventLog) and self.to_jsonl() == other.to_jsonl()

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, allow_nan=True) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "EventLog":
        return cls([json.loads(line) for line in text.splitlines() if line.strip()])


@dataclass
class Metrics:
    latched: bool = False
    time_to_latch: float = math.inf
    latch_dx: float = math.nan  # mm
    latch_dy: float = math.nan  # mm
    latch_yaw: float = math.nan  # deg
    missed_targets: int = 0
    mouth_rejections: int = 0
    towing_mode: str = ""
    desired_offset: float = math.nan
    mean_offset: float = math.nan
    offset_tracking_error: float = math.nan
    max_lateral_deviation: float = math.nan  # mm
    max_rel_yaw_drift: float = math.nan  # deg
    towing_time: float = 0.0
    pitch_roll_pre: float = math.nan
    pitch_roll_post: float = math.nan
    attenuation_ratio: float = math.nan
    released: bool = False

    def to_json_dict(self) -> dict:
        out = {}
        for k, v in vars(self).items():
            if isinstance(v, float) and not math.isfinite(v):
                v = None
            out[k] = v
        out["schema"] = "latchsim.metrics/1"
        return out


def metrics(log_: EventLog) -> Metrics:
    m = Metrics()
    latches = log_.of_type("latch")
    if latches:
        ev = latches[0]
        m.latched = True
        m.time_to_latch = ev["t"]
        m.latch_dx, m.latch_dy, m.latch_yaw = ev["d_x"], ev["d_y"], ev["yaw_rel"]
    m.missed_targets = len(log_.of_type("missed_target"))
    m.mouth_rejections = sum(1 for r in log_.of_type("mouth") if r["result"] != ACCEPTED)
    m.released = bool(log_.of_type("release"))

    tows = [r for r in log_.of_type("step") if r.get("towing")]
    if tows:
        m.towing_mode = tows[0]["funnel_mode"]
        m.desired_offset = tows[0]["desired_offset"]
        offsets = [r["rel_yaw"] for r in tows]
        m.mean_offset = float(np.mean(offsets))
        m.offset_tracking_error = abs(m.mean_offset - m.desired_offset)
        m.max_lateral_deviation = max(abs(r["lateral_dev"]) for r in tows)
        m.max_rel_yaw_drift = max(abs(r["yaw_drift"]) for r in tows)
        m.towing_time = tows[-1]["t"] - tows[0]["t"]

    steps = log_.of_type("step")
    pre = [max(abs(r["pitch"]), abs(r["roll"])) for r in steps if not r["latched"]]
    post = [max(abs(r["pitch"]), abs(r["roll"])) for r in steps if r["latched"]]
    if pre:
        m.pitch_roll_pre = max(pre)
    if post:
        m.pitch_roll_post = max(post)
    if pre and post and m.pitch_roll_pre > 0:
        m.attenuation_ratio = m.pitch_roll_post / m.pitch_roll_pre
    return m


# -- the simulation loop --------------------------------------------------------


@dataclass
class _Runtime:
    states: dict
    ctrl: LatchControllerState
    funnel: FunnelState
    compliance: ComplianceState = field(default_factory=ComplianceState)
    joint: Optional[JointConstraint] = None
    aperture_cmd: tuple = (1.0, 1.0)
    forces: dict = field(default_factory=dict)
    wrench: dict = field(default_factory=dict)
    in_funnel: bool = False
    prev_depth: float = math.nan
    gate_blocked: bool = False
    latch_time: Optional[float] = None
    tow_origin: Optional[tuple] = None
    released: bool = False


class Simulation:
    """One scenario instance; advance with :meth:`run`."""

    def __init__(self, scn: Scenario):
        self.scn = scn.validate()
        ss = np.random.SeedSequence(scn.seed)
        tag_ss, head_ss, loc_ss = ss.spawn(3)
        self.rng_tag = np.random.default_rng(tag_ss)
        self.rng_heading = np.random.default_rng(head_ss)
        self.rng_loc = np.random.default_rng(loc_ss)
        self.robot = scn.body(scn.latch.robot)
        self.target = scn.body(scn.latch.target)
        self.tag = scn.tag(scn.latch.tag_id)
        L = scn.latch
        tx, ty, tyaw = self.tag.offset
        self.stud = (tx + L.pin_length * math.cos(tyaw), ty + L.pin_length * math.sin(tyaw))
        h = scn.geometry.cone_height / 1000.0
        self.socket = (L.mouth[0] - h, L.mouth[1])
        cam = scn.camera.mount
        # camera d_x with the stud seated in the socket, tag facing squarely
        dx_latch = (self.socket[0] - cam[0]) * 1000.0 + L.pin_length * 1000.0
        self.thresholds = replace(scn.thresholds, dx_latch=dx_latch, pin_length=L.pin_length * 1000.0)
        # child yaw minus parent yaw when the tag faces the camera squarely
        self.rel_nominal = wrap_angle(cam[2] - tyaw - math.pi)
        self.log = EventLog()

    # geometry helpers
    def _tag_world(self, states):
        ts = states[self.target.id]
        x, y = ts.to_world(self.tag.offset[0], self.tag.offset[1])
        return x, y, wrap_angle(ts.yaw + self.tag.offset[2])

    def _magnet_sources(self, states):
        out = []
        for m in self.scn.magnets:
            s = states[m.body]
            x, y = s.to_world(m.offset[0], m.offset[1])
            out.append(MagnetSource(x, y, wrap_angle(s.yaw + m.offset[2]), m.moment, m.kind, m.powered))
        return out

    def _robot_goal(self, states):
        """Driving waypoint: stand-off in front of the tag, or the staging pose for magnetic docking."""
        scn, L = self.scn, self.scn.latch
        tx, ty, tyaw = self._tag_world(states)
        heading = wrap_angle(tyaw + math.pi - scn.camera.mount[2])
        c, s = math.cos(heading), math.sin(heading)
        if L.approach == "magnetic":
            ts = states[self.target.id]
            sx, sy = ts.to_world(*self.stud)
            # sensor 115 mm short of the stud, inside the guiding radius
            ax = L.magnetometer[0] + 0.115
            gx, gy = sx - (c * ax - s * L.magnetometer[1]), sy - (s * ax + c * L.magnetometer[1])
        else:
            cx, cy = tx + L.standoff * math.cos(tyaw), ty + L.standoff * math.sin(tyaw)
            mx, my = scn.camera.mount[0], scn.camera.mount[1]
            gx, gy = cx - (c * mx - s * my), cy - (s * mx + c * my)
        if scn.localization_noise > 0:
            gx += scn.localization_noise * self.rng_loc.normal()
            gy += scn.localization_noise * self.rng_loc.normal()
        return gx, gy, heading

    def _stud_in_funnel(self, states):
        """(depth m past the mouth plane, lateral m) of the stud in the robot frame."""
        rs, ts = states[self.robot.id], states[self.target.id]
        sx, sy = ts.to_world(*self.stud)
        bx, by = rs.to_body(sx, sy)
        return self.scn.latch.mouth[0] - bx, by - self.scn.latch.mouth[1]

    def _exact_obs(self, states):
        cam = camera_pose(states[self.robot.id], self.scn.camera.mount)
        return exact_tag_pose(cam, self._tag_world(states))

    def _joint_for_mode(self, funnel: FunnelState) -> JointConstraint:
        L = self.scn.latch
        mode = L.joint_mode or (RIGID_HOLD if funnel.mode == ONE_DOF else OFFSET_HOLD)
        offset = math.degrees(self.rel_nominal)
        if mode == OFFSET_HOLD:
            offset += steering_offset(funnel, self.scn.geometry)
        return JointConstraint(self.robot.id, self.target.id,
                               (self.socket[0] * 1000.0, self.socket[1] * 1000.0),
                               (self.stud[0] * 1000.0, self.stud[1] * 1000.0), mode, offset)

    # control tick
    def _control(self, rt: _Runtime, t: float) -> dict:
        scn, th = self.scn, self.thresholds
        states = rt.states
        robot = states[self.robot.id]
        cam = camera_pose(robot, scn.camera.mount)
        tag_w = self._tag_world(states)
        if scn.camera.enabled:
            obs = observe_tag(cam, tag_w, scn.camera.noise, scn.camera.fov_deg, scn.camera.max_range_mm,
                              self.rng_tag, self.tag.id, scn.camera.min_range_mm, scn.camera.max_incidence_deg)
        else:
            obs = TagObservation.invalid(self.tag.id)
        heading = observe_heading(robot, scn.heading_noise, self.rng_heading)
        mode_tag = "visual"
        wrench = None
        towing = False

        if rt.joint is not None:
            mode_tag = "towing"
            drive = self._tow_drive(rt, t)
            towing = drive is not None
            wrench, apertures = towing_step(rt.funnel.mode, obs, scn.towing.desired_offset if towing else 0.0,
                                            rt.funnel, scn.geometry, drive or (0.0, 0.0, 0.0))
            if rt.funnel.mode == TWO_DOF and not towing:
                apertures = (rt.funnel.aperture_left, rt.funnel.aperture_right)
            rt.aperture_cmd = apertures
        else:
            prev_phase = rt.ctrl.phase
            prev_flag = rt.ctrl.flag_missed_target
            wrench, ap, rt.ctrl = latching_step(obs, rt.ctrl, th, scn.gains)
            rt.aperture_cmd = (ap, ap)
            if rt.ctrl.phase != prev_phase:
                self.log.append(t, "phase", old=prev_phase, new=rt.ctrl.phase, flag=rt.ctrl.flag_missed_target)
            if rt.ctrl.flag_missed_target == 1 and prev_flag == 0:
                self.log.append(t, "missed_target", d_x=obs.d_x)
            elif rt.ctrl.flag_missed_target == 0 and prev_flag == 1:
                self.log.append(t, "retry_cleared", d_x=obs.d_x)
            if wrench is None:
                wrench, mode_tag = self._fallback(rt, t, heading)

        rt.wrench[self.robot.id] = wrench
        # station-keeping targets hold their start pose until latched
        for b in scn.bodies:
            if b.station_keeping and b.actuated and b.id != self.robot.id:
                if rt.joint is None:
                    rt.wrench[b.id] = driving_step(states[b.id], b.pose, scn.gains)
                else:
                    rt.wrench[b.id] = (0.0, 0.0, 0.0)
        for bid, wr in rt.wrench.items():
            u = wrench_to_forces(scn.allocation, wr)
            rt.forces[bid] = u
        return {"obs": obs, "mode": mode_tag, "heading": heading, "towing": towing}

    def _fallback(self, rt: _Runtime, t: float, heading: float):
        scn = self.scn
        robot = rt.states[self.robot.id]
        sources = [m for m in self._magnet_sources(rt.states) if m.powered]
        if sources:
            sx, sy = robot.to_world(*scn.latch.magnetometer)
            d = min(math.hypot(sx - m.x, sy - m.y) for m in sources) * 1000.0
            if scn.localization_noise > 0:
                d += 1000.0 * scn.localization_noise * self.rng_loc.normal()
            if d <= self.thresholds.guiding_activation_d:
                reading = field_at((sx, sy), robot.yaw, sources)
                goal_heading = math.degrees(self._robot_goal(rt.states)[2])
                cmd = guiding_step(reading, d, self.thresholds, peer_heading=goal_heading, heading=heading,
                                   velocity=(robot.u, robot.v, robot.r), t=t, gains=scn.guiding)
                rt.aperture_cmd = (1.0, 1.0)
                return cmd.wrench, "guiding_" + cmd.mode.lower()
        return driving_step(robot, self._robot_goal(rt.states), scn.gains), "driving"

    def _tow_drive(self, rt: _Runtime, t: float):
        scn = self.scn
        if not scn.towing.enabled or rt.latch_time is None or t < rt.latch_time + scn.towing.start_delay:
            return None
        robot = rt.states[self.robot.id]
        if rt.tow_origin is None:
            rt.tow_origin = (robot.x, robot.y, robot.yaw)
        ox, oy, oyaw = rt.tow_origin
        c, s = math.cos(oyaw), math.sin(oyaw)
        lateral = -s * (robot.x - ox) + c * (robot.y - oy)
        g = scn.gains
        v_t = scn.towing.speed
        # line following: surge speed loop with drag feed-forward, sway/yaw hold the line
        drag = self.robot.params.linear_drag[0] + self.target.params.linear_drag[0]
        X = drag * v_t + 2 * g.kd_dx * (v_t - robot.u)
        Y = -g.kp_dy * lateral - g.kd_dy * robot.v
        N = g.kp_psi * 4 * wrap_angle(oyaw - robot.yaw) - g.kd_psi * 4 * robot.r
        return X, Y, N

    def run(self) -> tuple[EventLog, Metrics]:
        scn = self.scn
        states = {b.id: BoatState(*b.pose) for b in scn.bodies}
        rt = _Runtime(states=states,
                      ctrl=LatchControllerState(period=scn.control_period),
                      funnel=FunnelState(mode=scn.latch.funnel_mode))
        for b in scn.bodies:
            if b.actuated:
                rt.forces[b.id] = np.zeros(4)
                rt.wrench[b.id] = (0.0, 0.0, 0.0)
        n_steps = int(round(scn.duration / scn.dt))
        per = scn.steps_per_control
        dt = scn.dt
        dynamic = [b for b in scn.bodies if not b.static]
        body_index = {b.id: i for i, b in enumerate(scn.bodies)}
        applied = {}
        info = None

        for k in range(n_steps):
            t = k * dt
            if k % per == 0:
                info = self._control(rt, t)
                applied = {bid: forces_to_wrench(scn.allocation, u) for bid, u in rt.forces.items()}
                self._log_step(rt, t, info, applied)

            # funnel actuators
            lim = scn.aperture_rate * dt
            al = rt.funnel.aperture_left + max(-lim, min(lim, rt.aperture_cmd[0] - rt.funnel.aperture_left))
            ar = rt.funnel.aperture_right + max(-lim, min(lim, rt.aperture_cmd[1] - rt.funnel.aperture_right))
            rt.funnel = set_aperture(rt.funnel, min(1.0, max(0.0, al)), min(1.0, max(0.0, ar)))

            for b in dynamic:
                force = applied.get(b.id, (0.0, 0.0, 0.0))
                dist, _ = sample_disturbance(scn.disturbance, t + 0.37 * body_index[b.id])
                states[b.id] = step_body(states[b.id], b.params, force, dist, dt)

            depth, lateral = self._stud_in_funnel(states)
            if rt.in_funnel or rt.joint is not None:
                closure = 1.0 - 0.5 * (rt.funnel.aperture_left + rt.funnel.aperture_right)
                fa = scn.actuator_force_gain * closure
                rt.compliance = step_compliance(scn.compliance, rt.compliance, lateral, fa, fa, dt)

            if rt.joint is None and not rt.released:
                self._capture_check(rt, t + dt, depth, lateral)

            if rt.joint is not None:
                if rt.joint.mode == OFFSET_HOLD:
                    offset = math.degrees(self.rel_nominal) + steering_offset(rt.funnel, scn.geometry)
                    rt.joint = replace(rt.joint, offset=offset)
                p, c, _ = apply_joint(states[self.robot.id], states[self.target.id], rt.joint, dt,
                                      self.robot.params, self.target.params, self.robot.static, self.target.static)
                states[self.robot.id], states[self.target.id] = p, c
                if scn.release_at is not None and t + dt >= scn.release_at:
                    rt.funnel, _ = receptor_event(rt.funnel, release=True)
                    rt.joint = None
                    rt.released = True
                    rt.ctrl = on_release(rt.ctrl)
                    rt.in_funnel = False
                    self.log.append(t + dt, "release")

            for sid in states:
                if not states[sid].is_finite():
                    raise SolverFault(f"body {sid} state became non-finite at t={t:.3f}")

        return self.log, metrics(self.log)

    def _capture_check(self, rt: _Runtime, t: float, depth: float, lateral: float) -> None:
        scn = self.scn
        h = scn.geometry.cone_height
        near = abs(lateral) < 0.5 * self.robot.params.hull_dims[1] / 1000.0 and depth * 1000.0 <= h
        if rt.prev_depth < 0 <= depth and near:
            result = acceptance_check(scn.geometry, rt.funnel, (lateral * 1000.0, 0.0))
            rt.in_funnel = result == ACCEPTED
            rt.gate_blocked = False
            self.log.append(t, "mouth", result=result, lateral=lateral * 1000.0,
                            aperture=[rt.funnel.aperture_left, rt.funnel.aperture_right])
        elif depth < 0:
            rt.in_funnel = False
        rt.prev_depth = depth
        if not rt.in_funnel or depth * 1000.0 < h - scn.latch.trigger_depth:
            return
        d_x, d_y, psi = self._exact_obs(rt.states)
        yaw_rel = wrap_deg(psi)
        if latch_gate(d_x, d_y, yaw_rel, self.thresholds) != ctl.PERMITTED:
            if not rt.gate_blocked:
                self.log.append(t, "gate_blocked", d_x=d_x, d_y=d_y, yaw_rel=yaw_rel)
                rt.gate_blocked = True
            return
        rt.funnel, event = receptor_event(rt.funnel, stud_at_socket=True, time=t, latch_pose=(d_x, d_y, yaw_rel))
        if event is None:
            return
        rt.ctrl = on_latch(rt.ctrl)
        rt.latch_time = t
        rt.joint = self._joint_for_mode(rt.funnel)
        self.log.append(t, "latch", d_x=d_x, d_y=d_y, yaw_rel=yaw_rel, lateral=lateral * 1000.0,
                        depth=depth * 1000.0, joint=rt.joint.mode,
                        aperture=[rt.funnel.aperture_left, rt.funnel.aperture_right])

    def _log_step(self, rt: _Runtime, t: float, info: dict, applied: dict) -> None:
        scn = self.scn
        obs = info["obs"]
        _, (pitch, roll) = sample_disturbance(scn.disturbance, t)
        latched = rt.joint is not None
        if latched:
            pitch *= scn.coupling_factor
            roll *= scn.coupling_factor
        rec = {
            "phase": rt.ctrl.phase, "flag": rt.ctrl.flag_missed_target, "mode": info["mode"],
            "obs_valid": obs.valid, "d_x": obs.d_x, "d_y": obs.d_y, "psi": obs.psi,
            "heading": info["heading"],
            "aperture_cmd": list(rt.aperture_cmd),
            "aperture": [rt.funnel.aperture_left, rt.funnel.aperture_right],
            "receptor": rt.funnel.receptor, "latched": latched, "pitch": pitch, "roll": roll,
            "compliance_x_s": rt.compliance.x_s * 1000.0,
            "bodies": {bid: [s.x, s.y, s.yaw, s.u, s.v, s.r] for bid, s in rt.states.items()},
            "forces": {bid: [float(f) for f in u] for bid, u in rt.forces.items()},
            "towing": info["towing"],
        }
        if latched:
            p, c = rt.states[self.robot.id], rt.states[self.target.id]
            rel = math.degrees(wrap_angle(c.yaw - p.yaw - self.rel_nominal))
            target_rel = rt.joint.offset - math.degrees(self.rel_nominal)
            # expected child centre in the parent frame for the current joint target
            a = self.rel_nominal + math.radians(target_rel)
            ca, sa = math.cos(a), math.sin(a)
            ey = self.socket[1] - (sa * self.stud[0] + ca * self.stud[1])
            _, cy = p.to_body(c.x, c.y)
            rec.update(funnel_mode=rt.funnel.mode, desired_offset=scn.towing.desired_offset,
                       rel_yaw=rel, yaw_drift=wrap_deg(rel - target_rel), lateral_dev=(cy - ey) * 1000.0)
        self.log.append(t, "step", **rec)


def run(scn: Scenario) -> tuple[EventLog, Metrics]:
    """Run a scenario to completion; deterministic for a given seed."""
    return Simulation(scn).run()
