#!/usr/bin/env python3
"""End-to-end navigation experiment: demos -> train -> deploy -> plots.

Thin driver over the CLI; pass --iterations to scale the run down.
"""

import argparse
import subprocess
import sys
from pathlib import Path


def sh(*args):
    print("+", " ".join(map(str, args)))
    subprocess.run([sys.executable, "-m", "mpail.cli", *map(str, args)], check=True)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/nav_experiment")
    ap.add_argument("--iterations", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    demos = out / "demos.csv"
    sh("gen-demos", "--env", "nav", "--mode", "direct", "--n", "4",
       "--seed", 20260810, "--out", demos)
    run = out / "run"
    sh("train", "--config", "configs/nav.cfg", "--demos", demos,
       "--iterations", args.iterations, "--seed", args.seed, "--out", run)
    sh("eval", "deploy", "--run", run, "--seed", 3, "--agents", 8, "--out", out / "deploy")
    sh("eval", "ood", "--run", run, "--demos", demos, "--agents", 200,
       "--box", 40, "--seed", 11, "--out", out / "ood.csv")
    sh("plot", "--csv", run / "train_record.csv", "--x", "iter",
       "--y", "mean_task_reward", "--out", out / "reward_curve.svg")
    sh("plot", "--csv", out / "ood.csv", "--x", "energy", "--y", "final_reward",
       "--kind", "scatter", "--out", out / "ood_scatter.svg")


if __name__ == "__main__":
    main()
