"""Closed-loop magnetic guiding from a grid of starts around a powered magnet.

Prints the time each start needs to settle within 10 mm of the magnet axis.
Starts cover the half disc of the activation radius that faces the approach.

    python3 scripts/guiding_sweep.py [--radii 20 60 100 124] [--bearings -80 -40 0 40 80]
"""
import argparse
import math

from latchsim.allocation import AllocationModel, forces_to_wrench, wrench_to_forces
from latchsim.control import ControllerThresholds, guiding_step
from latchsim.dynamics import BoatState, BodyParams, step_body
from latchsim.sensors import MagnetSource, calibrate_moment, field_at

SENSOR = (0.38, 0.0)  # magnetometer in the robot frame, m


def settle_time(r_mm, bearing_deg, duration=30.0, dt=0.001, period=0.05, tol_mm=10.0):
    src = MagnetSource(0.0, 0.0, 0.0, calibrate_moment())
    model, params, th = AllocationModel(), BodyParams(), ControllerThresholds()
    b = math.radians(bearing_deg)
    st = BoatState(-r_mm / 1000 * math.cos(b) - SENSOR[0], r_mm / 1000 * math.sin(b), 0.0)
    wrench, last_off = (0.0, 0.0, 0.0), 0.0
    per = int(round(period / dt))
    for k in range(int(round(duration / dt))):
        if k % per == 0:
            t = k * dt
            px, py = st.to_world(*SENSOR)
            if abs(py) * 1000 >= tol_mm:
                last_off = t
            cmd = guiding_step(field_at((px, py), st.yaw, [src]), math.hypot(px, py) * 1000, th,
                               peer_heading=0.0, heading=math.degrees(st.yaw), velocity=(st.u, st.v, st.r), t=t)
            wrench = (0.0, 0.0, 0.0) if cmd.wrench is None else \
                tuple(forces_to_wrench(model, wrench_to_forces(model, cmd.wrench)))
        st = step_body(st, params, wrench, (0.0, 0.0, 0.0), dt)
    px, py = st.to_world(*SENSOR)
    return last_off, abs(py) * 1000


def cli():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--radii", type=float, nargs="+", default=[20, 60, 100, 124])
    p.add_argument("--bearings", type=float, nargs="+", default=[-85, -60, -30, 0, 30, 60, 85])
    args = p.parse_args()
    print(f"{'r_mm':>6}{'bearing':>9}{'settle_s':>10}{'final_mm':>10}")
    for r in args.radii:
        for b in args.bearings:
            t, y = settle_time(r, b)
            print(f"{r:>6.0f}{b:>9.0f}{t:>10.2f}{y:>10.3f}")


if __name__ == "__main__":
    cli()
