"""Run every bundled scenario and print the report table.

    python3 scripts/run_all.py [--out out/all] [--jobs 4]
"""
import argparse
import sys

from latchsim.cli import main
from latchsim.scenario import bundled_scenarios


def cli():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="out/all")
    p.add_argument("--jobs", type=int, default=4)
    args = p.parse_args()
    code = main(["run", *sorted(bundled_scenarios()), "--out", args.out, "--jobs", str(args.jobs)])
    return max(code, main(["report", args.out]))


if __name__ == "__main__":
    sys.exit(cli())
