"""Command-line entry point.

Commands: gen-demos, train, eval {deploy,ood,ablate,bench,cte}, plot.
Global flags --config/--seed/--out; the env var MPAIL_THREADS caps worker
count for experiment drivers. Exit codes: 0 success, 1 runtime failure,
2 usage or config validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .agent import Discriminator, ValueFunction, collect_batch, make_policy, spawn_env_streams
from .config import ConfigError
from .dynamics import LearnedDynamics
from .envs import (
    cartpole_expert_action,
    generate_demos,
    nav_expert_action,
    read_demos,
    write_demos,
)
from .evaluation import (
    AblationCell,
    ExperimentGrid,
    GaussianFit,
    cross_track_error,
    deploy_episodes,
    run_ablation,
    run_ood_eval,
    spearman_rho,
    throughput_bench,
)
from .planner import MppiConfig
from .svgplot import SvgFigure, cost_color
from .training import Trainer, read_train_record

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _overrides(args):
    out = []
    if getattr(args, "seed", None) is not None:
        out.append(("run", "seed", args.seed))
    if getattr(args, "out", None) is not None:
        out.append(("run", "out", args.out))
    if getattr(args, "iterations", None) is not None:
        out.append(("run", "iterations", args.iterations))
    return out


def _load(args):
    return cfgmod.load_config(args.config, _overrides(args))


def cmd_gen_demos(args):
    if args.n < 1:
        raise ConfigError(["--n must be >= 1"])
    resolved = _load(args)
    if args.env is not None:
        resolved["run"]["env"] = args.env
        if args.env == "cartpole":
            resolved["env"].setdefault("dt", 0.02)
            if args.config is None:
                resolved["env"]["dt"] = 0.02
                resolved["env"]["init_box_side"] = 0.1
    env = cfgmod.make_env(resolved)
    name = resolved["run"]["env"]
    if name == "nav":
        mode = args.mode or "direct"
        expert = lambda s: nav_expert_action(s, mode=mode, wheelbase=resolved["env"]["wheelbase"])
    else:
        if args.mode not in (None, "balance"):
            raise ConfigError([f"--mode {args.mode!r} is not defined for cartpole"])
        expert = cartpole_expert_action
    demos = generate_demos(env, expert, args.n, resolved["run"]["seed"])
    out = Path(args.out or resolved["run"]["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_demos(demos, out)
    finals = np.array([ep[-1] for ep in demos.episodes])
    if name == "nav":
        dist = np.hypot(finals[:, 0] - 10.0, finals[:, 1] - 10.0)
        stats = f"final distance to goal: mean {dist.mean():.3f} m, max {dist.max():.3f} m"
    else:
        stats = f"final |pole angle|: mean {np.abs(finals[:, 2]).mean():.4f} rad"
    print(
        f"wrote {out}: {len(demos.episodes)} episodes, "
        f"{demos.n_transitions} transitions; {stats}"
    )
    return 0


def cmd_train(args):
    resolved = _load(args)
    demos_path = args.demos or resolved["run"]["demos"]
    if not demos_path or not Path(demos_path).exists():
        print(f"error: demo file not found: {demos_path!r}", file=sys.stderr)
        return RUNTIME_ERROR
    resolved["run"]["demos"] = str(demos_path)
    demos = read_demos(demos_path)
    env = cfgmod.make_env(resolved)
    if demos.state_dim != env.state_dim:
        print(
            f"error: demo state dim {demos.state_dim} != env state dim {env.state_dim}",
            file=sys.stderr,
        )
        return RUNTIME_ERROR
    model = cfgmod.make_model(resolved)
    mppi_cfg = cfgmod.make_mppi_config(resolved)
    train_cfg = cfgmod.make_train_config(resolved)
    run_dir = Path(resolved["run"]["out"])
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.resolved", "w", encoding="utf-8", newline="\n") as f:
        f.write(cfgmod.format_resolved(resolved))
    trainer = Trainer(env, demos, model, mppi_cfg, train_cfg, run_dir)
    result = trainer.train()
    print(
        f"run complete: {len(result.records)} iterations, best iteration "
        f"{result.best_iteration}, records at {run_dir / 'train_record.csv'}"
    )
    return 0


def load_run(run_dir):
    """Open a completed run directory: resolved config, env, model, nets at
    the best checkpoint, and the final training temperature."""
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.resolved"
    if not cfg_path.exists():
        raise FileNotFoundError(f"{cfg_path} does not exist (not a run directory?)")
    resolved = cfgmod.load_config(cfg_path)
    with open(run_dir / "summary.json", "r", encoding="utf-8") as f:
        summary = json.load(f)
    best = summary["best_iteration"]
    ckpt = run_dir / str(best)
    env = cfgmod.make_env(resolved)
    disc = Discriminator.from_checkpoint(ckpt / "disc.ckpt", env.state_dim)
    value = ValueFunction.from_checkpoint(ckpt / "value.ckpt", env.state_dim)
    if resolved["run"]["model"] == "learned":
        model = LearnedDynamics.load(ckpt / "dyn.ckpt")
    else:
        model = cfgmod.make_model(resolved)
    temperature = summary["final_temperature"]
    return resolved, env, model, disc, value, temperature, summary


def cmd_eval_deploy(args):
    resolved, env, model, disc, value, temperature, _ = load_run(args.run)
    mppi_cfg = cfgmod.make_mppi_config(resolved)
    if args.seed is not None:
        seed = args.seed
    else:
        seed = resolved["run"]["seed"] + 500
    n_agents = args.agents
    out_dir = Path(args.out or args.run)
    out_dir.mkdir(parents=True, exist_ok=True)
    pi = make_policy(env, model, disc, value, mppi_cfg, n_envs=n_agents)
    pi.planner.step_cost.refresh()
    pi.planner.terminal_value.refresh()
    env_rngs, plan_rngs, _ = spawn_env_streams(seed, n_agents)
    states = np.stack([env.reset(r) for r in env_rngs], axis=0)
    _, _, first_batch = pi.act_batch(states, plan_rngs, [None] * n_agents, temperature, "deploy", keep_batch=True)
    pi.reset()
    batch = collect_batch(env, pi, disc, seed, temperature, mode="deploy", init_states=states)
    csv_path = out_dir / "path.csv"
    dim = env.state_dim
    cols = ",".join(f"s{i}" for i in range(dim))
    lines = [f"agent,t,{cols},task_reward"]
    for e in range(n_agents):
        for t in range(batch.states.shape[1]):
            vals = ",".join(f"{v:.17g}" for v in batch.states[e, t])
            tr = env.task_reward(batch.states[e, t])
            lines.append(f"{e},{t},{vals},{tr:.17g}")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    fig = SvgFigure(title="deployment", xlabel="x", ylabel="y")
    if first_batch is not None:
        colors = cost_color(first_batch.traj_costs)
        stride = max(1, len(first_batch.states) // 64)
        for k in range(0, len(first_batch.states), stride):
            fig.line(first_batch.states[k, :, 0], first_batch.states[k, :, 1], color=colors[k])
    for e in range(n_agents):
        fig.line(batch.states[e, :, 0], batch.states[e, :, 1], color="#000000",
                 label="executed" if e == 0 else "")
    svg_path = out_dir / "path.svg"
    fig.save(svg_path)
    print(f"wrote {csv_path} and {svg_path}")
    return 0


def cmd_eval_ood(args):
    resolved, env, model, disc, value, temperature, _ = load_run(args.run)
    mppi_cfg = cfgmod.make_mppi_config(resolved)
    demos = read_demos(args.demos or resolved["run"]["demos"])
    fit = GaussianFit.fit(demos.all_states())
    seed = args.seed if args.seed is not None else resolved["run"]["seed"] + 900
    out = Path(args.out or Path(args.run) / "ood.csv")
    run_ood_eval(
        env, model, disc, value, fit, mppi_cfg,
        n_agents=args.agents, seed=seed, temperature=temperature,
        out_path=out, init_box_side=args.box,
    )
    rows = list(csv.DictReader(open(out, encoding="utf-8")))
    if rows:
        en = [float(r["energy"]) for r in rows]
        fr = [float(r["final_reward"]) for r in rows]
        print(f"wrote {out}: {len(rows)} agents, spearman(energy, reward) = "
              f"{spearman_rho(en, fr):.3f}")
    else:
        print(f"wrote {out}: 0 agents")
    return 0


def cmd_eval_ablate(args):
    resolved = _load(args)
    demos = read_demos(args.demos or resolved["run"]["demos"])
    mppi_cfg = cfgmod.make_mppi_config(resolved)
    train_cfg = cfgmod.make_train_config(resolved)
    modes = {
        "both": (True, True),
        "cost_only": (True, False),
        "value_only": (False, True),
    }
    cells = []
    for h in args.horizons:
        for m in args.modes:
            if m not in modes:
                raise ConfigError([f"unknown ablation mode {m!r}"])
            uc, uv = modes[m]
            cells.append(AblationCell(name=m, horizon=h, use_cost=uc, use_value=uv))
    grid = ExperimentGrid(cells=cells, seeds=args.seeds)
    out_dir = Path(args.out or resolved["run"]["out"])
    path, counters = run_ablation(
        grid,
        lambda: cfgmod.make_env(resolved),
        lambda: cfgmod.make_model(resolved),
        demos,
        mppi_cfg,
        train_cfg,
        out_dir,
    )
    print(f"wrote {path} ({len(cells)} cells x {len(args.seeds)} seeds)")
    return 0


def cmd_eval_bench(args):
    resolved = _load(args)
    env = cfgmod.make_env(resolved)
    model = cfgmod.make_model(resolved)
    rng = np.random.default_rng(resolved["run"]["seed"])
    disc = Discriminator(env.state_dim, rng=rng)
    value = ValueFunction(env.state_dim, rng=rng)
    mppi_cfg = cfgmod.make_mppi_config(resolved)
    if args.n_samples:
        mppi_cfg = replace(mppi_cfg, n_samples=args.n_samples)
    out = Path(args.out or "bench.csv")
    throughput_bench(
        env, model, disc, value, mppi_cfg,
        horizons=args.horizons, iteration_counts=args.iters,
        n_envs=args.envs, seed=resolved["run"]["seed"], out_path=out,
        episode_steps=resolved["env"]["horizon_steps"],
    )
    print(f"wrote {out} ({len(args.horizons) * len(args.iters)} rows)")
    return 0


def cmd_eval_cte(args):
    resolved, env, model, disc, value, temperature, _ = load_run(args.run)
    mppi_cfg = cfgmod.make_mppi_config(resolved)
    ref = read_demos(args.ref)
    seed = args.seed if args.seed is not None else resolved["run"]["seed"] + 700
    # deploy one episode per agent starting near the reference start
    ref_path = ref.episodes[0][:, :2]
    init = []
    env_rngs, _, _ = spawn_env_streams(seed, args.agents)
    for r in env_rngs:
        init.append(env.reset(r))
    init = np.array(init)
    _, _, batch = deploy_episodes(
        env, model, disc, value, mppi_cfg, args.agents, seed, temperature, init_states=init
    )
    out = Path(args.out or Path(args.run) / "cte.csv")
    lines = ["agent,max_cte_m,mean_cte_m"]
    for e in range(args.agents):
        mx, mean = cross_track_error(batch.states[e, :, :2], ref_path)
        lines.append(f"{e},{mx:.17g},{mean:.17g}")
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    print(f"wrote {out}")
    return 0


def cmd_plot(args):
    path = Path(args.csv)
    with open(path, "r", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        names = reader.fieldnames or []
        rows = list(reader)
    for col in (args.x, args.y):
        if rows and col not in names:
            print(f"error: unknown column {col!r}; have {names}", file=sys.stderr)
            return RUNTIME_ERROR
    xs = np.array([float(r[args.x]) for r in rows]) if rows else np.array([])
    ys = np.array([float(r[args.y]) for r in rows]) if rows else np.array([])
    fig = SvgFigure(title=path.name, xlabel=args.x, ylabel=args.y)
    if args.kind == "line":
        fig.line(xs, ys)
    else:
        fig.scatter(xs, ys)
    out = Path(args.out or path.with_suffix(".svg"))
    fig.save(out)
    print(f"wrote {out}")
    return 0


def _int_list(raw):
    return [int(v) for v in raw.split(",") if v.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="mpail", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", default=None, help="config file path")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)

    g = sub.add_parser("gen-demos", help="generate scripted demonstrations")
    add_common(g)
    g.add_argument("--env", choices=("nav", "cartpole"), default=None)
    g.add_argument("--mode", default=None, help="nav: direct|circling; cartpole: balance")
    g.add_argument("--n", type=int, required=True)
    g.set_defaults(fn=cmd_gen_demos)

    t = sub.add_parser("train", help="run the adversarial training loop")
    add_common(t)
    t.add_argument("--demos", default=None)
    t.add_argument("--iterations", type=int, default=None)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluation drivers")
    esub = e.add_subparsers(dest="eval_command", required=True)

    d = esub.add_parser("deploy", help="deterministic deployment + path artifacts")
    add_common(d)
    d.add_argument("--run", required=True)
    d.add_argument("--agents", type=int, default=1)
    d.set_defaults(fn=cmd_eval_deploy)

    o = esub.add_parser("ood", help="wide-init deployment sweep")
    add_common(o)
    o.add_argument("--run", required=True)
    o.add_argument("--demos", default=None)
    o.add_argument("--agents", type=int, default=200)
    o.add_argument("--box", type=float, default=40.0)
    o.set_defaults(fn=cmd_eval_ood)

    a = esub.add_parser("ablate", help="cost/value ablation grid")
    add_common(a)
    a.add_argument("--demos", required=True)
    a.add_argument("--horizons", type=_int_list, default=[10])
    a.add_argument("--modes", type=lambda s: s.split(","), default=["both", "cost_only", "value_only"])
    a.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    a.add_argument("--iterations", type=int, default=None)
    a.set_defaults(fn=cmd_eval_ablate)

    b = esub.add_parser("bench", help="planner throughput benchmark")
    add_common(b)
    b.add_argument("--H", dest="horizons", type=_int_list, default=[5, 10, 30])
    b.add_argument("--J", dest="iters", type=_int_list, default=[1, 2, 5])
    b.add_argument("--N", dest="n_samples", type=int, default=None)
    b.add_argument("--envs", type=int, default=4)
    b.set_defaults(fn=cmd_eval_bench)

    c = esub.add_parser("cte", help="cross-track error against a reference path")
    add_common(c)
    c.add_argument("--run", required=True)
    c.add_argument("--ref", required=True)
    c.add_argument("--agents", type=int, default=1)
    c.set_defaults(fn=cmd_eval_cte)

    pl = sub.add_parser("plot", help="SVG line/scatter from a CSV")
    add_common(pl)
    pl.add_argument("--csv", required=True)
    pl.add_argument("--x", required=True)
    pl.add_argument("--y", required=True)
    pl.add_argument("--kind", choices=("line", "scatter"), default="line")
    pl.set_defaults(fn=cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except (FileNotFoundError, ValueError, RuntimeError, FloatingPointError) as err:
        print(f"error ({args.command}): {err}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
