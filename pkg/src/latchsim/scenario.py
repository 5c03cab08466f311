"""Scenario files: TOML (or JSON) in mm/deg, validated against the bundled schema, converted to SI."""
from __future__ import annotations

import json
import math
import sys
from dataclasses import fields, replace
from importlib import resources
from pathlib import Path

import jsonschema

from .allocation import AllocationModel
from .control import ControllerThresholds, GuidingGains, PdGains
from .dynamics import BodyParams, DisturbanceSignal
from .funnel import ComplianceParams, FunnelGeometry
from .sensors import CameraModel, calibrate_moment
from .sim import BodySpec, LatchSpec, MagnetSpec, Scenario, ScenarioError, TagSpec, TowingSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# controller thresholds the sim derives from the geometry; not settable from files
_DERIVED_THRESHOLDS = {"dx_latch", "pin_length"}


def schema() -> dict:
    return json.loads(resources.files("latchsim").joinpath("scenario.schema.json").read_text())


def bundled_scenarios() -> dict[str, Path]:
    root = resources.files("latchsim").joinpath("scenarios")
    return {p.name[:-5]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".toml")}


def read_document(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}", "file") from exc
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno}: {exc.msg}", "file") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(str(exc), "file") from exc


def check_schema(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ScenarioError(err.message, path)


def _pose(p):
    return (p[0] / 1000.0, p[1] / 1000.0, math.radians(p[2]))


def _override(cls_or_obj, values: dict, section: str, skip=()):
    base = cls_or_obj() if isinstance(cls_or_obj, type) else cls_or_obj
    known = {f.name for f in fields(base) if f.init}
    for key in values:
        if key not in known or key in skip:
            raise ScenarioError(f"unknown key {key!r}", f"{section}.{key}")
    try:
        return replace(base, **values)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc), section) from exc


def scenario_from_dict(doc: dict) -> Scenario:
    """Build a validated :class:`Scenario` from a file-unit document."""
    check_schema(doc)
    bodies = []
    for i, b in enumerate(doc["bodies"]):
        params = BodyParams.large_hull() if b.get("preset") == "large_hull" else BodyParams()
        extra = {k: (tuple(v) if isinstance(v, list) else v) for k, v in b.items()
                 if k in ("mass", "yaw_inertia", "linear_drag", "yaw_drag", "hull_dims")}
        params = _override(params, extra, f"bodies.{i}")
        bodies.append(BodySpec(b["id"], b["kind"], _pose(b["pose"]), params, b.get("station_keeping", False)))
    tags = tuple(TagSpec(t["id"], t["body"], _pose(t["offset"])) for t in doc["tags"])
    magnets = tuple(MagnetSpec(m["body"], _pose(m["offset"]), m.get("moment", calibrate_moment()),
                               m.get("kind", "permanent"), m.get("powered", True)) for m in doc.get("magnets", ()))

    lt = dict(doc["latch"])
    for key in ("mouth", "magnetometer"):
        if key in lt:
            lt[key] = (lt[key][0] / 1000.0, lt[key][1] / 1000.0)
    for key in ("pin_length", "standoff"):
        if key in lt:
            lt[key] = lt[key] / 1000.0
    latch = LatchSpec(**lt)

    dist_doc = dict(doc.get("disturbance", {}))
    preset = dist_doc.pop("preset", "calm")
    disturbance = DisturbanceSignal.river() if preset == "river" else DisturbanceSignal.calm()
    # waves follow the scenario seed unless pinned in the file
    dist_doc.setdefault("seed", doc.get("seed", 0))
    if "wave_amplitude_pos" in dist_doc:
        dist_doc["wave_amplitude_pos"] /= 1000.0
    if "gusts" in dist_doc:
        dist_doc["gusts"] = tuple(tuple(g) for g in dist_doc["gusts"])
    disturbance = _override(disturbance, dist_doc, "disturbance")

    cam_doc = dict(doc.get("camera", {}))
    if "mount" in cam_doc:
        cam_doc["mount"] = _pose(cam_doc["mount"])
    if "noise" in cam_doc:
        cam_doc["noise"] = tuple(cam_doc["noise"])
    camera = _override(CameraModel, cam_doc, "camera")

    top = {k: doc[k] for k in ("duration", "dt", "control_period", "seed", "heading_noise", "coupling_factor",
                               "actuator_force_gain", "aperture_rate", "release_at") if k in doc}
    if "localization_noise" in doc:
        top["localization_noise"] = doc["localization_noise"] / 1000.0
    scn = Scenario(
        name=doc["name"], bodies=tuple(bodies), tags=tags, latch=latch, magnets=magnets,
        disturbance=disturbance, camera=camera,
        thresholds=_override(ControllerThresholds, doc.get("thresholds", {}), "thresholds", _DERIVED_THRESHOLDS),
        gains=_override(PdGains, doc.get("gains", {}), "gains"),
        guiding=_override(GuidingGains, doc.get("guiding", {}), "guiding"),
        geometry=_override(FunnelGeometry, doc.get("geometry", {}), "geometry"),
        compliance=_override(ComplianceParams, doc.get("compliance", {}), "compliance"),
        allocation=_override(AllocationModel, doc.get("allocation", {}), "allocation"),
        towing=_override(TowingSpec, doc.get("towing", {}), "towing"),
        **top,
    )
    return scn.validate()


def load_scenario(path) -> Scenario:
    return scenario_from_dict(read_document(path))


def scenario_to_dict(scn: Scenario) -> dict:
    """Normalized file-unit view of a scenario (every default spelled out)."""

    def pose(p):
        return [p[0] * 1000.0, p[1] * 1000.0, math.degrees(p[2])]

    def plain(obj, skip=()):
        out = {}
        for f in fields(obj):
            if f.name in skip:
                continue
            v = getattr(obj, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    L = scn.latch
    latch = plain(L)
    latch["mouth"] = [L.mouth[0] * 1000.0, L.mouth[1] * 1000.0]
    latch["magnetometer"] = [L.magnetometer[0] * 1000.0, L.magnetometer[1] * 1000.0]
    latch["pin_length"] = L.pin_length * 1000.0
    latch["standoff"] = L.standoff * 1000.0
    if latch["joint_mode"] is None:
        del latch["joint_mode"]
    dist = plain(scn.disturbance)
    dist["wave_amplitude_pos"] = scn.disturbance.wave_amplitude_pos * 1000.0
    dist["gusts"] = [list(g) for g in scn.disturbance.gusts]
    cam = plain(scn.camera)
    cam["mount"] = pose(scn.camera.mount)
    doc = {
        "name": scn.name, "duration": scn.duration, "dt": scn.dt, "control_period": scn.control_period,
        "seed": scn.seed, "heading_noise": scn.heading_noise,
        "localization_noise": scn.localization_noise * 1000.0, "coupling_factor": scn.coupling_factor,
        "actuator_force_gain": scn.actuator_force_gain, "aperture_rate": scn.aperture_rate,
        "bodies": [dict(id=b.id, kind=b.kind, pose=pose(b.pose), station_keeping=b.station_keeping,
                        **plain(b.params)) for b in scn.bodies],
        "tags": [dict(id=t.id, body=t.body, offset=pose(t.offset)) for t in scn.tags],
        "magnets": [dict(body=m.body, offset=pose(m.offset), moment=m.moment, kind=m.kind, powered=m.powered)
                    for m in scn.magnets],
        "latch": latch, "towing": plain(scn.towing), "disturbance": dist, "camera": cam,
        "thresholds": plain(scn.thresholds, _DERIVED_THRESHOLDS), "gains": plain(scn.gains),
        "guiding": plain(scn.guiding), "geometry": plain(scn.geometry), "compliance": plain(scn.compliance),
        "allocation": {"a": scn.allocation.a, "b": scn.allocation.b, "f_max": scn.allocation.f_max},
    }
    if scn.release_at is not None:
        doc["release_at"] = scn.release_at
    return doc
