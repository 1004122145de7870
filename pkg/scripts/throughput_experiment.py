#!/usr/bin/env python3
"""Planner wall-time across horizon/iteration settings (one episode each)."""

import argparse

import numpy as np

from mpail.agent import Discriminator, ValueFunction
from mpail.config import load_config, make_env, make_mppi_config
from mpail.dynamics import AnalyticBicycle
from mpail.evaluation import throughput_bench


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/bench.csv")
    ap.add_argument("--H", type=lambda s: [int(v) for v in s.split(",")],
                    default=[5, 10, 30])
    ap.add_argument("--J", type=lambda s: [int(v) for v in s.split(",")],
                    default=[1, 2, 5])
    ap.add_argument("--envs", type=int, default=64)
    args = ap.parse_args()
    resolved = load_config(None)
    env = make_env(resolved)
    rng = np.random.default_rng(0)
    path = throughput_bench(
        env, AnalyticBicycle(), Discriminator(4, rng=rng), ValueFunction(4, rng=rng),
        make_mppi_config(resolved), args.H, args.J, args.envs, seed=0,
        out_path=args.out,
    )
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
