"""Adversarial training loop: collect, update discriminator, regress value.

Each iteration runs one fixed-length episode in every parallel environment
under the planning policy, then takes one discriminator update (binary
cross-entropy on agent-vs-expert transition pairs, agent labeled 1) and a
configured number of clipped value-regression updates on GAE targets, and
finally decays the softmin temperature. There is no policy network and no
policy-gradient step anywhere; the planner is the generator.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .agent import Discriminator, PiMppi, ValueFunction, collect_batch, make_policy
from .dynamics import LearnedDynamics, ReplayBuffer
from .nets import Adam, NonFiniteGradientError, clip_grad_norm, l2_penalty
from .planner import MppiConfig

TRAIN_RECORD_HEADER = (
    "iter,disc_loss,value_loss,mean_task_reward,mean_airl_reward,temperature,wall_ms"
)


@dataclass
class TrainConfig:
    iterations: int = 300
    n_envs: int = 64
    seed: int = 0
    # discriminator
    disc_lr: float = 1e-4
    disc_beta1: float = 0.5
    disc_beta2: float = 0.999
    disc_width: int = 32
    disc_hidden_layers: int = 2
    disc_l2: float = 0.0
    disc_spectral_norm: bool = True
    # value
    value_lr: float = 1e-3
    value_beta1: float = 0.9
    value_beta2: float = 0.999
    value_width: int = 32
    value_hidden_layers: int = 2
    value_clip: float = 0.2
    value_grad_norm: float = 1.0
    # returns
    gamma: float = 0.99
    gae_lambda: float = 0.95
    # update schedule
    minibatches: int = 3
    epochs: int = 3
    value_updates_per_disc: int = 3
    # temperature
    temp_init: float = 1.0
    temp_decay: float = 0.01
    temp_min: float = 1e-5
    # checkpoints
    checkpoint_every: int = 50
    # per-step episode log sidecar (large; off by default)
    log_episodes: bool = False
    # learned dynamics (ignored for analytic models)
    dyn_lr: float = 1e-3
    dyn_width: int = 64
    dyn_hidden_layers: int = 3
    dyn_lr_decay: float = 0.9
    dyn_lr_decay_every: int = 15
    dyn_min_lr: float = 1e-6
    dyn_buffer_capacity: int = 20000
    dyn_batch_size: int = 256
    dyn_epochs: int = 1

    def validate(self):
        problems = []
        for name in (
            "iterations",
            "n_envs",
            "disc_width",
            "disc_hidden_layers",
            "value_width",
            "value_hidden_layers",
            "minibatches",
            "epochs",
        ):
            if getattr(self, name) < 1 and name != "iterations":
                problems.append(f"{name} must be >= 1")
        if self.iterations < 0:
            problems.append("iterations must be >= 0")
        if self.value_updates_per_disc < 1:
            problems.append("value_updates_per_disc must be >= 1")
        for name in ("disc_lr", "value_lr", "temp_init", "gamma"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be > 0")
        if not (0.0 <= self.gae_lambda <= 1.0):
            problems.append("gae_lambda must be in [0, 1]")
        if self.temp_min <= 0 or self.temp_min > self.temp_init:
            problems.append("temp_min must be in (0, temp_init]")
        if self.disc_l2 < 0:
            problems.append("disc_l2 must be >= 0")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class ReturnEstimate:
    returns: np.ndarray  # (E, T) lambda-returns G_t
    advantages: np.ndarray  # (E, T)
    values: np.ndarray  # (E, T+1) bootstrap values used


def compute_returns(rewards, values, gamma, gae_lambda) -> ReturnEstimate:
    """GAE(lambda) advantages and lambda-returns G_t = A_t + V(s_t).

    rewards: (T,) or (E, T); values: (T+1,) or (E, T+1) including the
    terminal bootstrap (episodes end by time limit, not termination).
    """
    rewards = np.atleast_2d(np.asarray(rewards, dtype=np.float64))
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape[1] != rewards.shape[1] + 1:
        raise ValueError("values must have exactly one more step than rewards")
    delta = rewards + gamma * values[:, 1:] - values[:, :-1]
    adv = np.empty_like(delta)
    acc = np.zeros(delta.shape[0])
    for t in range(delta.shape[1] - 1, -1, -1):
        acc = delta[:, t] + gamma * gae_lambda * acc
        adv[:, t] = acc
    returns = adv + values[:, :-1]
    return ReturnEstimate(returns=returns, advantages=adv, values=values)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    return np.logaddexp(0.0, x)


def discriminator_update(disc: Discriminator, agent_pairs, expert_pairs, cfg: TrainConfig, adam: Adam, rng):
    """One scheduled discriminator update (epochs x minibatches of BCE).

    Agent transitions are labeled 1 and expert transitions 0; expert
    minibatches are resampled uniformly from the full demo set for every
    agent minibatch. Returns the mean BCE loss (sum of the per-side means)
    and the adversarial objective value E[log D_agent] + E[log(1-D_expert)].
    """
    agent_pairs = np.asarray(agent_pairs, dtype=np.float64)
    expert_pairs = np.asarray(expert_pairs, dtype=np.float64)
    if len(agent_pairs) == 0 or len(expert_pairs) == 0:
        raise ValueError("both agent and expert batches must be non-empty")
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(agent_pairs))
        for chunk in np.array_split(order, cfg.minibatches):
            if len(chunk) == 0:
                continue
            a_mb = agent_pairs[chunk]
            e_idx = rng.integers(0, len(expert_pairs), size=len(chunk))
            e_mb = expert_pairs[e_idx]
            x = np.concatenate([a_mb, e_mb], axis=0)
            logits, cache = disc.mlp.forward_cached(x)
            f = logits[:, 0]
            na = len(a_mb)
            fa, fe = f[:na], f[na:]
            loss = float(np.mean(_softplus(-fa)) + np.mean(_softplus(fe)))
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"discriminator loss diverged: {loss} (check inputs/lr)"
                )
            up = np.empty_like(f)
            up[:na] = (_sigmoid(fa) - 1.0) / na
            up[na:] = _sigmoid(fe) / len(e_mb)
            grads, _ = disc.mlp.backward(cache, up[:, None])
            penalty = l2_penalty(disc.mlp, cfg.disc_l2, grads)
            adam.step(disc.mlp, grads)
            losses.append(loss + penalty)
    mean_loss = float(np.mean(losses))
    return {"loss": mean_loss, "objective": -mean_loss}


def value_update(value: ValueFunction, states, targets, old_values, cfg: TrainConfig, adam: Adam, rng):
    """Clipped value regression toward lambda-returns.

    Per-sample loss is max of the unclipped and clipped squared errors,
    with predictions clipped to old_values +- value_clip; gradients are
    globally norm-clipped before the Adam step.
    """
    states = np.asarray(states, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    old_values = np.asarray(old_values, dtype=np.float64).reshape(-1)
    if len(states) == 0:
        raise ValueError("value batch must be non-empty")
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(states))
        for chunk in np.array_split(order, cfg.minibatches):
            if len(chunk) == 0:
                continue
            s_mb, g_mb, old_mb = states[chunk], targets[chunk], old_values[chunk]
            pred, cache = value.mlp.forward_cached(s_mb)
            v = pred[:, 0]
            v_clip = old_mb + np.clip(v - old_mb, -cfg.value_clip, cfg.value_clip)
            l_un = (v - g_mb) ** 2
            l_cl = (v_clip - g_mb) ** 2
            loss = float(np.mean(np.maximum(l_un, l_cl)))
            if not np.isfinite(loss):
                raise FloatingPointError(f"value loss diverged: {loss}")
            m = len(chunk)
            up = np.where(l_un >= l_cl, 2.0 * (v - g_mb) / m, 0.0)
            grads, _ = value.mlp.backward(cache, up[:, None])
            grads, _norm = clip_grad_norm(grads, cfg.value_grad_norm)
            adam.step(value.mlp, grads)
            losses.append(loss)
    return float(np.mean(losses))


def temperature_decay(temperature, cfg: TrainConfig):
    """Multiplicative decay, floored: max(temp_min, temp * (1 - decay))."""
    return max(cfg.temp_min, temperature * (1.0 - cfg.temp_decay))


@dataclass
class TrainRecord:
    iteration: int
    disc_loss: float
    value_loss: float
    mean_task_reward: float
    mean_airl_reward: float
    temperature: float
    wall_ms: float

    def csv_row(self):
        return (
            f"{self.iteration},{self.disc_loss:.17g},{self.value_loss:.17g},"
            f"{self.mean_task_reward:.17g},{self.mean_airl_reward:.17g},"
            f"{self.temperature:.17g},{self.wall_ms:.3f}"
        )


@dataclass
class TrainResult:
    records: list
    run_dir: Path
    best_iteration: int
    counters: dict


class Trainer:
    """Owns the networks, optimizers, and the per-iteration update order:
    collect -> (dynamics) -> discriminator -> value x ratio -> decay."""

    def __init__(self, env, demos, model, mppi_cfg: MppiConfig, cfg: TrainConfig, run_dir):
        cfg.validate()
        mppi_cfg.validate()
        self.env = env
        self.demos = demos
        self.model = model
        self.mppi_cfg = mppi_cfg
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        root = np.random.SeedSequence(cfg.seed)
        net_ss, self.update_ss = root.spawn(2)
        disc_ss, value_ss = net_ss.spawn(2)
        mk = lambda ss: np.random.Generator(np.random.SFC64(ss))
        self.disc = Discriminator(
            env.state_dim,
            width=cfg.disc_width,
            hidden_layers=cfg.disc_hidden_layers,
            spectral_norm=cfg.disc_spectral_norm,
            rng=mk(disc_ss),
        )
        self.value = ValueFunction(
            env.state_dim,
            width=cfg.value_width,
            hidden_layers=cfg.value_hidden_layers,
            rng=mk(value_ss),
        )
        self.disc_adam = Adam(
            self.disc.mlp, lr=cfg.disc_lr, beta1=cfg.disc_beta1, beta2=cfg.disc_beta2
        )
        self.value_adam = Adam(
            self.value.mlp, lr=cfg.value_lr, beta1=cfg.value_beta1, beta2=cfg.value_beta2
        )
        upd = self.update_ss.spawn(3)
        self.disc_rng = mk(upd[0])
        self.value_rng = mk(upd[1])
        self.dyn_rng = mk(upd[2])
        self.pi = make_policy(env, model, self.disc, self.value, mppi_cfg, n_envs=cfg.n_envs)
        self.buffer = None
        if isinstance(model, LearnedDynamics):
            self.buffer = ReplayBuffer(
                cfg.dyn_buffer_capacity, env.state_dim, env.action_dim, seed=cfg.seed + 9
            )
        self.expert_pairs = demos.transition_pairs()
        self.counters = {"disc_updates": 0, "value_updates": 0, "dyn_updates": 0}

    def _refresh_planner(self):
        self.pi.planner.step_cost.refresh()
        self.pi.planner.terminal_value.refresh()

    def checkpoint(self, iteration):
        out = self.run_dir / str(iteration)
        out.mkdir(parents=True, exist_ok=True)
        self.disc.save(out / "disc.ckpt")
        self.value.save(out / "value.ckpt")
        if isinstance(self.model, LearnedDynamics):
            self.model.save(out / "dyn.ckpt")
        return out

    def _append_episode_log(self, iteration, batch):
        path = self.run_dir / "episodes.csv"
        new = not path.exists()
        with open(path, "a", encoding="utf-8", newline="\n") as f:
            if new:
                f.write("iter,env,t,reward,task_reward\n")
            e, t = batch.rewards.shape
            for env_i in range(e):
                for step in range(t):
                    f.write(
                        f"{iteration},{env_i},{step},"
                        f"{batch.rewards[env_i, step]:.17g},"
                        f"{batch.task_rewards[env_i, step]:.17g}\n"
                    )

    def train(self) -> TrainResult:
        cfg = self.cfg
        records = []
        temperature = cfg.temp_init
        self.checkpoint(0)
        best_iter, best_reward = 0, -np.inf
        record_path = self.run_dir / "train_record.csv"
        with open(record_path, "w", encoding="utf-8", newline="\n") as rec_file:
            rec_file.write(TRAIN_RECORD_HEADER + "\n")
            for it in range(cfg.iterations):
                t0 = time.perf_counter()
                self._refresh_planner()
                batch = collect_batch(
                    self.env,
                    self.pi,
                    self.disc,
                    seed=np.random.SeedSequence((cfg.seed, 1000 + it)).entropy,
                    temperature=temperature,
                    mode="train",
                )
                if self.buffer is not None:
                    e, t, a = batch.actions.shape
                    self.buffer.insert(
                        batch.states[:, :-1].reshape(e * t, -1),
                        batch.actions.reshape(e * t, a),
                        batch.states[:, 1:].reshape(e * t, -1),
                    )
                    self.model.update(
                        self.buffer, cfg.dyn_epochs, cfg.dyn_batch_size, self.dyn_rng
                    )
                    self.model.end_episode()
                    self.counters["dyn_updates"] += 1
                flat_states = batch.states.reshape(-1, self.env.state_dim)
                values = self.value.mlp.forward(flat_states)[:, 0].reshape(
                    batch.states.shape[0], -1
                )
                est = compute_returns(batch.rewards, values, cfg.gamma, cfg.gae_lambda)
                disc_stats = discriminator_update(
                    self.disc,
                    batch.transition_pairs(),
                    self.expert_pairs,
                    cfg,
                    self.disc_adam,
                    self.disc_rng,
                )
                self.counters["disc_updates"] += 1
                v_states = batch.states[:, :-1].reshape(-1, self.env.state_dim)
                v_targets = est.returns.reshape(-1)
                v_old = values[:, :-1].reshape(-1)
                v_loss = 0.0
                for _ in range(cfg.value_updates_per_disc):
                    v_loss = value_update(
                        self.value, v_states, v_targets, v_old, cfg, self.value_adam, self.value_rng
                    )
                    self.counters["value_updates"] += 1
                if cfg.log_episodes:
                    self._append_episode_log(it, batch)
                mean_task = float(batch.task_rewards.mean())
                rec = TrainRecord(
                    iteration=it,
                    disc_loss=disc_stats["loss"],
                    value_loss=v_loss,
                    mean_task_reward=mean_task,
                    mean_airl_reward=float(batch.rewards.mean()),
                    temperature=temperature,
                    wall_ms=(time.perf_counter() - t0) * 1e3,
                )
                records.append(rec)
                rec_file.write(rec.csv_row() + "\n")
                rec_file.flush()
                temperature = temperature_decay(temperature, cfg)
                if mean_task > best_reward:
                    best_reward, best_iter = mean_task, it + 1
                    self.checkpoint(it + 1)
                elif (it + 1) % cfg.checkpoint_every == 0 or it + 1 == cfg.iterations:
                    self.checkpoint(it + 1)
        with open(self.run_dir / "summary.json", "w", encoding="utf-8") as f:
            json.dump(
                {
                    "iterations": cfg.iterations,
                    "best_iteration": best_iter,
                    "final_temperature": temperature,
                    "counters": self.counters,
                },
                f,
                indent=2,
            )
        return TrainResult(
            records=records, run_dir=self.run_dir, best_iteration=best_iter, counters=self.counters
        )


def read_train_record(path):
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        for row in reader:
            rows.append({k: float(v) for k, v in row.items()})
    return rows
