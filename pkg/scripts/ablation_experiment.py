#!/usr/bin/env python3
"""Cost/value ablation across planning horizons (library API, scaled config)."""

import argparse
from pathlib import Path

from mpail.config import load_config, make_env, make_mppi_config, make_train_config
from mpail.dynamics import AnalyticBicycle
from mpail.envs import NavEnv, NavParams, generate_demos, nav_expert_action
from mpail.evaluation import AblationCell, ExperimentGrid, run_ablation


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--iterations", type=int, default=60)
    ap.add_argument("--seeds", type=lambda s: [int(v) for v in s.split(",")],
                    default=[0, 1, 2])
    args = ap.parse_args()

    resolved = load_config(None, [("run", "iterations", args.iterations)])
    resolved["mppi"].update(n_samples=128, n_iterations=2, chunk=2048,
                            rollout_dtype="float32")
    resolved["train"]["n_envs"] = 8
    demos = generate_demos(NavEnv(params=NavParams(slip=True)),
                           nav_expert_action, 4, seed=20260810)
    grid = ExperimentGrid(
        cells=[
            AblationCell("both", 10, True, True),
            AblationCell("cost_only", 10, True, False),
            AblationCell("value_only", 10, False, True),
            AblationCell("cost_only", 5, True, False),
            AblationCell("cost_only", 30, True, False),
        ],
        seeds=args.seeds,
    )
    path, counters = run_ablation(
        grid,
        lambda: make_env(resolved),
        lambda: AnalyticBicycle(),
        demos,
        make_mppi_config(resolved),
        make_train_config(resolved),
        Path(args.out),
    )
    print(f"wrote {path}")
    for (cell, seed), c in counters.items():
        print(f"  {cell} seed {seed}: cost_calls={c['cost_calls']} value_calls={c['value_calls']}")


if __name__ == "__main__":
    main()
