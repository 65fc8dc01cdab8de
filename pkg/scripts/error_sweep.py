#!/usr/bin/env python3
"""Desk-scale error-decay and speedup experiment.

Builds the offline stage on a 15x15 mesh with 20 training parameters, then
sweeps the reduced basis size over a held-out test set of 10 parameters and
times the online solves against the truth solver.  Writes errors.csv and
timings.csv under <workdir>/reports and prints both tables.

Usage:
    python3 scripts/error_sweep.py [--workdir WD] [--n-max 20] [--n-list 2,4,6,8,10]
"""

import argparse
import os
import sys
import tempfile

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from swe_ocp import cli  # noqa: E402

CONFIG_TEMPLATE = """\
[mesh]
nx = 15
ny = 15

[pod]
n_max = {n_max}
n = {n}
seed = 0

[paths]
workdir = {workdir}
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default="sweep_workdir")
    ap.add_argument("--n-max", type=int, default=20)
    ap.add_argument("--n-list", default="2,4,6,8,10")
    ap.add_argument("--test-size", type=int, default=10)
    args = ap.parse_args()

    n = max(int(x) for x in args.n_list.split(","))
    os.makedirs(args.workdir, exist_ok=True)
    with tempfile.NamedTemporaryFile("w", suffix=".ini", delete=False) as fh:
        fh.write(CONFIG_TEMPLATE.format(n_max=args.n_max, n=n,
                                        workdir=args.workdir))
        config = fh.name
    try:
        rc = cli.main(["--config", config, "offline"])
        if rc:
            return rc
        return cli.main(["--config", config, "bench", "--N", args.n_list,
                         "--test-size", str(args.test_size)])
    finally:
        os.unlink(config)


if __name__ == "__main__":
    sys.exit(main())
