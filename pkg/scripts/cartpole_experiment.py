#!/usr/bin/env python3
"""Cartpole with a fully online-learned dynamics model: demos -> train -> deploy."""

import argparse
import subprocess
import sys
from pathlib import Path


def sh(*args):
    print("+", " ".join(map(str, args)))
    subprocess.run([sys.executable, "-m", "mpail.cli", *map(str, args)], check=True)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/cartpole_experiment")
    ap.add_argument("--iterations", type=int, default=120)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    demos = out / "demos.csv"
    sh("gen-demos", "--env", "cartpole", "--n", "10", "--seed", 20260810,
       "--out", demos)
    run = out / "run"
    sh("train", "--config", "configs/cartpole.cfg", "--demos", demos,
       "--iterations", args.iterations, "--seed", args.seed, "--out", run)
    sh("eval", "deploy", "--run", run, "--seed", 5, "--agents", 10, "--out", out / "deploy")
    sh("plot", "--csv", run / "train_record.csv", "--x", "iter",
       "--y", "mean_task_reward", "--out", out / "upright_curve.svg")


if __name__ == "__main__":
    main()
