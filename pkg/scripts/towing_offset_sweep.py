"""Tow with the 2-DoF funnel at several commanded heading offsets and report the realized mean.

    python3 scripts/towing_offset_sweep.py [--offsets 0 2 4 6 8]
"""
import argparse
from dataclasses import replace

from latchsim.scenario import bundled_scenarios, load_scenario
from latchsim.sim import run


def cli():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--offsets", type=float, nargs="+", default=[0.0, 2.0, 4.0, 6.0, 8.0])
    args = p.parse_args()
    base = load_scenario(bundled_scenarios()["indoor_pool_2dof"])
    print(f"{'commanded':>10}{'mean':>8}{'error':>8}{'t_latch':>9}")
    for off in args.offsets:
        scn = replace(base, towing=replace(base.towing, desired_offset=off))
        _, m = run(scn)
        print(f"{off:>10.1f}{m.mean_offset:>8.2f}{m.offset_tracking_error:>8.2f}{m.time_to_latch:>9.2f}")


if __name__ == "__main__":
    cli()
