"""Metrics and experiment drivers: OOD energy, cross-track error, ablation
grid, OOD-recovery deployment sweep, and planner throughput benchmarking.

Experiment cells are config-complete and self-seeded, so they can run in
any order (or concurrently) without changing results; all CSV output goes
through a single writer at the end of each driver.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .agent import Discriminator, PiMppi, ValueFunction, collect_batch, make_policy, spawn_env_streams
from .planner import MppiConfig
from .training import TrainConfig, Trainer


def worker_count(default=1):
    """Worker cap from MPAIL_THREADS (>=1); defaults to serial."""
    raw = os.environ.get("MPAIL_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return default


@dataclass
class GaussianFit:
    """Gaussian fitted to expert states, with trace-scaled ridge on the
    covariance so near-degenerate demo sets stay invertible."""

    mean: np.ndarray
    cov: np.ndarray
    _chol: np.ndarray = field(repr=False, default=None)
    _logdet: float = field(repr=False, default=0.0)

    @classmethod
    def fit(cls, states, ridge_scale=1e-6):
        states = np.asarray(states, dtype=np.float64)
        if states.ndim != 2 or len(states) < 2:
            raise ValueError("need a (M, d) array with M >= 2 to fit")
        mean = states.mean(axis=0)
        centered = states - mean
        cov = centered.T @ centered / (len(states) - 1)
        d = cov.shape[0]
        eps = ridge_scale * np.trace(cov) / d
        cov = cov + eps * np.eye(d)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(
                "covariance singular even after ridge; increase ridge_scale"
            ) from None
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return cls(mean=mean, cov=cov, _chol=chol, _logdet=logdet)

    def log_density(self, x):
        """log N(x; mean, cov): the OOD energy (higher = more in-distribution)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        d = self.mean.size
        diff = pts - self.mean
        sol = np.linalg.solve(self.cov, diff.T).T
        maha = np.sum(diff * sol, axis=1)
        out = -0.5 * (d * np.log(2.0 * np.pi) + self._logdet + maha)
        return float(out[0]) if single else out


def ood_energy(state, fit: GaussianFit):
    return fit.log_density(state)


def cross_track_error(path, reference):
    """(max, mean) of per-point minimum distance to the reference polyline.

    Uses segment projection rather than nearest-vertex distance. ``path``
    is (T, 2) positions; ``reference`` is (M, 2) with M >= 2.
    """
    path = np.atleast_2d(np.asarray(path, dtype=np.float64))
    reference = np.asarray(reference, dtype=np.float64)
    if path.size == 0:
        raise ValueError("empty agent path")
    if reference.ndim != 2 or len(reference) < 2:
        raise ValueError("reference path needs at least 2 points")
    a = reference[:-1]  # (M-1, 2) segment starts
    b = reference[1:]
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
    dists = np.empty(len(path))
    for i, p in enumerate(path):
        t = np.clip(np.sum((p - a) * ab, axis=1) / denom, 0.0, 1.0)
        proj = a + t[:, None] * ab
        d = np.hypot(*(p - proj).T)
        dists[i] = d.min()
    return float(dists.max()), float(dists.mean())


# ---------------------------------------------------------------------------
# Experiment drivers


@dataclass
class AblationCell:
    name: str
    horizon: int
    use_cost: bool
    use_value: bool


@dataclass
class ExperimentGrid:
    cells: list
    seeds: list

    def __post_init__(self):
        if not self.cells:
            raise ValueError("grid must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")


def run_ablation(grid: ExperimentGrid, env_factory, model_factory, demos, mppi_cfg: MppiConfig, train_cfg: TrainConfig, out_dir):
    """Train every (cell, seed) pair and emit per-iteration mean task reward.

    Rows: cell,horizon,use_cost,use_value,seed,iter,mean_task_reward.
    Also returns per-cell evaluation counters proving the ablation flags
    (e.g. cost-only cells never call the value network in the planner).
    """
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cell, seed) for cell in grid.cells for seed in grid.seeds]

    def run_one(job):
        cell, seed = job
        m_cfg = replace(
            mppi_cfg, horizon=cell.horizon, use_cost=cell.use_cost, use_value=cell.use_value
        )
        t_cfg = replace(train_cfg, seed=seed)
        run_dir = out_dir / f"{cell.name}_H{cell.horizon}_seed{seed}"
        trainer = Trainer(env_factory(), demos, model_factory(), m_cfg, t_cfg, run_dir)
        result = trainer.train()
        counters = {
            "cost_calls": trainer.pi.planner.step_cost.calls,
            "value_calls": trainer.pi.planner.terminal_value.calls,
        }
        return cell, seed, result.records, counters

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, jobs))
    else:
        results = [run_one(j) for j in jobs]
    rows = ["cell,horizon,use_cost,use_value,seed,iter,mean_task_reward"]
    cell_counters = {}
    for cell, seed, records, counters in results:
        cell_counters[(cell.name, seed)] = counters
        for rec in records:
            rows.append(
                f"{cell.name},{cell.horizon},{int(cell.use_cost)},{int(cell.use_value)},"
                f"{seed},{rec.iteration},{rec.mean_task_reward:.17g}"
            )
    path = out_dir / "ablation.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(rows) + "\n")
    return path, cell_counters


def deploy_episodes(env, model, disc: Discriminator, value: ValueFunction, mppi_cfg: MppiConfig, n_agents, seed, temperature, init_states=None):
    """Deterministic deployment of n_agents for one episode each.

    Returns (init_states, final_states, episode batch).
    """
    pi = make_policy(env, model, disc, value, mppi_cfg, n_envs=n_agents)
    pi.planner.step_cost.refresh()
    pi.planner.terminal_value.refresh()
    batch = collect_batch(
        env, pi, disc, seed=seed, temperature=temperature, mode="deploy", init_states=init_states
    )
    return batch.states[:, 0], batch.states[:, -1], batch


def run_ood_eval(env, model, disc, value, fit: GaussianFit, mppi_cfg, n_agents, seed, temperature, out_path, init_box_side=40.0):
    """Deploy agents from a wide init box; record initial OOD energy and
    final task reward per agent. Rows: agent,x0,y0,yaw0,energy,final_reward."""
    from dataclasses import replace as _replace

    header = "agent,x0,y0,yaw0,energy,final_reward"
    if n_agents == 0:
        with open(out_path, "w", encoding="utf-8", newline="\n") as f:
            f.write(header + "\n")
        return out_path
    wide_env = type(env)(params=env.params, spec=_replace(env.spec, init_box_side=init_box_side))
    env_rngs, _, _ = spawn_env_streams(seed, n_agents)
    init = np.stack([wide_env.reset(r) for r in env_rngs], axis=0)
    first, final, _ = deploy_episodes(
        wide_env, model, disc, value, mppi_cfg, n_agents, seed, temperature, init_states=init
    )
    energies = fit.log_density(first)
    rewards = wide_env.task_reward(final)
    lines = [header]
    for i in range(n_agents):
        lines.append(
            f"{i},{first[i, 0]:.17g},{first[i, 1]:.17g},{first[i, 2]:.17g},"
            f"{energies[i]:.17g},{rewards[i]:.17g}"
        )
    with open(out_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    return out_path


def throughput_bench(env, model, disc, value, mppi_cfg: MppiConfig, horizons, iteration_counts, n_envs, seed, out_path, episode_steps=100):
    """Wall-time one full episode across parallel envs per (H, J) cell.

    Rows: horizon,iterations,n_samples,n_envs,total_ms,per_step_ms,rollout_flops.
    The flops column counts model-rollout transition evaluations times an
    estimated per-transition cost, so doubling N doubles it exactly.
    """
    lines = ["horizon,iterations,n_samples,n_envs,total_ms,per_step_ms,rollout_flops"]
    for h in horizons:
        for j in iteration_counts:
            cfg = replace(mppi_cfg, horizon=h, n_iterations=j)
            pi = make_policy(env, model, disc, value, cfg, n_envs=n_envs)
            pi.planner.step_cost.refresh()
            pi.planner.terminal_value.refresh()
            env_rngs, plan_rngs, act_rngs = spawn_env_streams(seed, n_envs)
            states = np.stack([env.reset(r) for r in env_rngs], axis=0)
            t0 = time.perf_counter()
            for _ in range(episode_steps):
                actions, _, _ = pi.act_batch(states, plan_rngs, act_rngs, cfg.temperature, "deploy")
                states = env.step(states, actions, env_rngs)
            total_ms = (time.perf_counter() - t0) * 1e3
            flops = n_envs * episode_steps * j * cfg.n_samples * h * _transition_flops(env, disc)
            lines.append(
                f"{h},{j},{cfg.n_samples},{n_envs},{total_ms:.3f},"
                f"{total_ms / episode_steps:.3f},{flops}"
            )
    with open(out_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    return out_path


def _transition_flops(env, disc):
    # 2*sum(in*out) over disc layers + a nominal 30 flops for the model step
    total = 0
    for layer in disc.mlp.layers:
        total += 2 * layer.in_width * layer.out_width
    return total + 30


def spearman_rho(x, y):
    """Spearman rank correlation (average ranks for ties)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise ValueError("need two equal-length vectors of size >= 2")

    def ranks(v):
        order = np.argsort(v, kind="mergesort")
        r = np.empty(len(v))
        sv = v[order]
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and sv[j + 1] == sv[i]:
                j += 1
            r[order[i : j + 1]] = 0.5 * (i + j) + 1.0
            i = j + 1
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt(np.sum(rx * rx) * np.sum(ry * ry))
    if denom == 0:
        return 0.0
    return float(np.sum(rx * ry) / denom)
