"""Temperature / strength sweep demo on the two-mode mixture task.

Runs `doit sweep` over the grid declared in the config's [sweep] table and
prints the resulting mean-reward surface. The reward is a step function on
the positive mode, so the mean column reads directly as the fraction of
mass moved onto that mode.

    python3 scripts/sweep_demo.py [--out runs/sweep_demo] [--jobs 2]
"""

import argparse
import csv
import os
import sys

from doit.cli import main as doit_main

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs", "gmm_mode.toml")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=CONFIG)
    parser.add_argument("--out", default="runs/sweep_demo")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    code = doit_main(
        [
            "sweep",
            "--config",
            args.config,
            "--out",
            args.out,
            "--seed",
            str(args.seed),
            "--jobs",
            str(args.jobs),
        ]
    )
    if code != 0:
        sys.exit(code)

    with open(os.path.join(args.out, "sweep.csv")) as f:
        rows = list(csv.DictReader(f))
    print()
    print(f"{'tau':>8} {'gamma':>8} {'mean reward':>12} {'std':>10} {'status':>8}")
    for row in rows:
        mean = f"{float(row['mean']):+.4f}" if row["status"] == "ok" else "-"
        std = f"{float(row['std']):.4f}" if row["status"] == "ok" else "-"
        print(f"{float(row['tau']):>8.3g} {float(row['gamma']):>8.3g} {mean:>12} {std:>10} {row['status']:>8}")
    print(f"full table: {args.out}/sweep.csv")


if __name__ == "__main__":
    main()
