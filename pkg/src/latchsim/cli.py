"""``latchsim run|validate|report``.

Exit codes: 0 success, 1 I/O or usage problem, 2 scenario validation error
(or nothing to report), 3 solver fault.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .scenario import bundled_scenarios, load_scenario, scenario_to_dict
from .sim import EventLog, Metrics, Scenario, ScenarioError, SolverFault, run

log = logging.getLogger("latchsim")

TRAJECTORY_SCHEMA = "latchsim.trajectory/1"
PHASE_CODES = {"align": 0, "approach": 1, "backoff": 2, "retry": 3, "latched": 4}

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_FAULT = 0, 1, 2, 3


def resolve_scenario(ref: str) -> Path:
    """A path, or the name of a bundled scenario."""
    p = Path(ref)
    if p.exists():
        return p
    bundled = bundled_scenarios()
    if ref in bundled:
        return bundled[ref]
    raise ScenarioError(f"no such file or bundled scenario: {ref}", "file")


def with_seed(scn: Scenario, seed) -> Scenario:
    if seed is None:
        return scn
    return replace(scn, seed=seed, disturbance=replace(scn.disturbance, seed=seed))


# -- output ---------------------------------------------------------------------


def _fmt(v: float) -> str:
    return "nan" if v != v else f"{v:.6f}"


def trajectory_columns(scn: Scenario) -> list[str]:
    cols = ["t"]
    for b in scn.bodies:
        cols += [f"{b.id}.{c}" for c in ("x_mm", "y_mm", "yaw_deg", "u_mm_s", "v_mm_s", "r_deg_s")]
    for b in scn.bodies:
        if b.actuated:
            cols += [f"{b.id}.f{i}_N" for i in range(1, 5)]
    cols += ["aperture_left", "aperture_right", "phase", "phase_code", "flag_missed_target", "mode",
             "obs_valid", "d_x_mm", "d_y_mm", "psi_deg", "latched"]
    return cols


def trajectory_rows(scn: Scenario, elog: EventLog):
    for r in elog.of_type("step"):
        row = [_fmt(r["t"])]
        for b in scn.bodies:
            x, y, yaw, u, v, w = r["bodies"][b.id]
            row += [_fmt(x * 1000.0), _fmt(y * 1000.0), _fmt(math.degrees(yaw)),
                    _fmt(u * 1000.0), _fmt(v * 1000.0), _fmt(math.degrees(w))]
        for b in scn.bodies:
            if b.actuated:
                row += [_fmt(f) for f in r["forces"][b.id]]
        row += [_fmt(r["aperture"][0]), _fmt(r["aperture"][1]), r["phase"], str(PHASE_CODES[r["phase"]]),
                str(r["flag"]), r["mode"], str(int(r["obs_valid"])), _fmt(r["d_x"]), _fmt(r["d_y"]),
                _fmt(r["psi"]), str(int(r["latched"]))]
        yield row


def render_trajectory(scn: Scenario, elog: EventLog, fmt: str = "csv") -> str:
    cols = trajectory_columns(scn)
    if fmt == "jsonl":
        lines = [json.dumps({"schema": TRAJECTORY_SCHEMA, "columns": cols})]
        for row in trajectory_rows(scn, elog):
            lines.append(json.dumps(dict(zip(cols, row))))
        return "\n".join(lines) + "\n"
    lines = [f"# schema={TRAJECTORY_SCHEMA} scenario={scn.name} seed={scn.seed}", ",".join(cols)]
    lines += [",".join(row) for row in trajectory_rows(scn, elog)]
    return "\n".join(lines) + "\n"


def _write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_outputs(scn: Scenario, elog: EventLog, m: Metrics, out: Path, fmt: str = "csv") -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    traj = out / f"{scn.name}_trajectory.{'jsonl' if fmt == 'jsonl' else 'csv'}"
    metrics_path = out / f"{scn.name}_metrics.json"
    events = out / f"{scn.name}_events.jsonl"
    _write_atomic(traj, render_trajectory(scn, elog, fmt))
    doc = m.to_json_dict()
    doc.update(scenario=scn.name, seed=scn.seed)
    _write_atomic(metrics_path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _write_atomic(events, elog.to_jsonl())
    return [traj, metrics_path, events]


# -- commands -------------------------------------------------------------------


def _run_one(ref: str, seed, out: str, fmt: str):
    """Worker body: returns (name, exit code, message)."""
    try:
        scn = with_seed(load_scenario(resolve_scenario(ref)), seed)
    except ScenarioError as exc:
        return ref, EXIT_INVALID, f"invalid scenario {ref}: {exc}"
    try:
        elog, m = run(scn)
    except ScenarioError as exc:
        return scn.name, EXIT_INVALID, f"invalid scenario {ref}: {exc}"
    except SolverFault as exc:
        return scn.name, EXIT_FAULT, f"solver fault in {scn.name}: {exc}"
    try:
        write_outputs(scn, elog, m, Path(out), fmt)
    except OSError as exc:
        return scn.name, EXIT_IO, f"cannot write outputs for {scn.name}: {exc}"
    ttl = "-" if not m.latched else f"{m.time_to_latch:.2f} s"
    return scn.name, EXIT_OK, f"{scn.name}: latched={m.latched} time_to_latch={ttl} missed={m.missed_targets}"


def cmd_run(args) -> int:
    jobs = max(1, args.jobs)
    tasks = [(ref, args.seed, args.out, args.format) for ref in args.scenarios]
    if jobs == 1 or len(tasks) == 1:
        results = [_run_one(*t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, *zip(*tasks)))
    code = EXIT_OK
    for _, rc, msg in results:
        print(msg, file=sys.stdout if rc == EXIT_OK else sys.stderr)
        # a solver fault outranks a validation error, which outranks I/O trouble
        code = max(code, rc)
    return code


def cmd_validate(args) -> int:
    code = EXIT_OK
    for ref in args.scenarios:
        try:
            scn = with_seed(load_scenario(resolve_scenario(ref)), args.seed)
        except ScenarioError as exc:
            print(f"invalid scenario {ref}: {exc}", file=sys.stderr)
            code = EXIT_INVALID
            continue
        print(json.dumps(scenario_to_dict(scn), indent=2, sort_keys=True))
    return code


def _num(v, spec=".2f"):
    return "-" if v is None else format(v, spec)


def cmd_report(args) -> int:
    root = Path(args.logdir)
    if not root.is_dir():
        print(f"not a directory: {root}", file=sys.stderr)
        return EXIT_INVALID
    metric_files = sorted(root.glob("*_metrics.json"))
    if not metric_files:
        print(f"no *_metrics.json files in {root}", file=sys.stderr)
        return EXIT_INVALID
    header = (f"{'scenario':<22}{'latched':>8}{'t_latch_s':>11}{'d_x_mm':>9}{'d_y_mm':>9}{'yaw_deg':>9}"
              f"{'missed':>8}{'offset_cmd':>12}{'offset_mean':>13}{'offset_err':>12}{'attenuation':>13}")
    print(header)
    for mf in metric_files:
        m = json.loads(mf.read_text())
        name = m.get("scenario", mf.name[: -len("_metrics.json")])
        print(f"{name:<22}{str(m['latched']):>8}{_num(m['time_to_latch']):>11}{_num(m['latch_dx'], '.1f'):>9}"
              f"{_num(m['latch_dy'], '.1f'):>9}{_num(m['latch_yaw']):>9}{m['missed_targets']:>8}"
              f"{_num(m['desired_offset']):>12}{_num(m['mean_offset']):>13}{_num(m['offset_tracking_error']):>12}"
              f"{_num(m['attenuation_ratio']):>13}")
        traj = root / f"{name}_trajectory.csv"
        if traj.exists():
            _write_plot_data(traj, root / f"{name}_plot.dat")
    return EXIT_OK


def _write_plot_data(traj: Path, dest: Path) -> None:
    """Whitespace-separated t, d_x, d_y, psi, phase code: gnuplot and CSV readers both take it."""
    lines = traj.read_text().splitlines()
    cols = lines[1].split(",")
    idx = [cols.index(c) for c in ("t", "d_x_mm", "d_y_mm", "psi_deg", "phase_code")]
    out = ["# t_s d_x_mm d_y_mm psi_deg phase_code (0 align, 1 approach, 2 backoff, 3 retry, 4 latched)"]
    for line in lines[2:]:
        f = line.split(",")
        out.append(" ".join(f[i] for i in idx))
    _write_atomic(dest, "\n".join(out) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latchsim", description="Robotic-boat latching simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run scenarios and write trajectory, metrics and events")
    r.add_argument("scenarios", nargs="+", help="scenario files (.toml/.json) or bundled scenario names")
    r.add_argument("--out", default="out", help="output directory (default: ./out)")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--jobs", type=int, default=1, help="worker processes for batch runs")
    r.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="trajectory file format")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="parse and validate scenarios, print the normalized form")
    v.add_argument("scenarios", nargs="+")
    v.add_argument("--seed", type=int, default=None)
    v.set_defaults(func=cmd_validate)

    rep = sub.add_parser("report", help="summarize a run directory and write plot data")
    rep.add_argument("logdir")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    level = os.environ.get("LATCHSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
