"""Planner-as-policy: exploration wrapper, discriminator reward, collection.

Sign audit (the single authoritative statement for this repo):

* The discriminator MLP outputs a logit ``f(s, s')`` and is trained by
  binary cross-entropy with agent transitions labeled 1 and expert
  transitions labeled 0, so ``sigmoid(f)`` estimates P(agent | s, s').
* The planner's step cost is ``c(s, s') = f(s, s')``: expert-like
  transitions cost less, so a cost minimizer moves toward the expert.
* The reward is the negated cost, ``r(s, s') = -f(s, s')``. At the
  optimal discriminator this equals log(rho_E / rho_pi), the log density
  ratio of expert to agent transition occupancy: agent-like transitions
  receive lower reward. ``r`` is itself a logit: with
  D_E = sigmoid(r) = P(expert | s, s'), r = log D_E - log(1 - D_E).

The density-ratio recovery test pins this empirically; if you change any
sign here, that test is the tripwire.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import LEAKY_RELU, RELU, Mlp, NetFunction, load_mlp, save_mlp
from .planner import MppiConfig, MppiPlanner, shift_actions

SIGMA_FLOOR = 1e-3  # per-dim exploration floor in train mode


class Discriminator:
    """Transition discriminator f(s, s') backing both cost and reward."""

    def __init__(self, state_dim, width=32, hidden_layers=2, spectral_norm=True, rng=None):
        self.state_dim = state_dim
        widths = [2 * state_dim] + [width] * hidden_layers + [1]
        self.mlp = Mlp.build(
            widths, hidden_activation=LEAKY_RELU, spectral_norm=spectral_norm, rng=rng
        )

    def logit(self, pairs):
        """Raw f(s, s') on (..., 2S) stacked transition pairs; float64."""
        out = self.mlp.forward(np.atleast_2d(pairs))[:, 0]
        return out if np.asarray(pairs).ndim > 1 else float(out[0])

    def cost_fn(self, dtype=np.float32, chunk=4096):
        fn = NetFunction(self.mlp, sign=1.0, dtype=dtype, chunk=chunk)
        fn.name = "discriminator"
        return fn

    @classmethod
    def from_checkpoint(cls, path, state_dim):
        disc = cls.__new__(cls)
        disc.state_dim = state_dim
        disc.mlp = load_mlp(path)
        return disc

    def save(self, path):
        save_mlp(self.mlp, path)


class ValueFunction:
    """Terminal value V(s) for infinite-horizon costing."""

    def __init__(self, state_dim, width=32, hidden_layers=2, spectral_norm=False, rng=None):
        self.state_dim = state_dim
        widths = [state_dim] + [width] * hidden_layers + [1]
        self.mlp = Mlp.build(
            widths, hidden_activation=RELU, spectral_norm=spectral_norm, rng=rng
        )

    def value(self, states):
        out = self.mlp.forward(np.atleast_2d(states))[:, 0]
        return out if np.asarray(states).ndim > 1 else float(out[0])

    def value_fn(self, dtype=np.float32, chunk=4096):
        fn = NetFunction(self.mlp, sign=1.0, dtype=dtype, chunk=chunk)
        fn.name = "value"
        return fn

    @classmethod
    def from_checkpoint(cls, path, state_dim):
        vf = cls.__new__(cls)
        vf.state_dim = state_dim
        vf.mlp = load_mlp(path)
        return vf

    def save(self, path):
        save_mlp(self.mlp, path)


def airl_reward(s, s_next, disc: Discriminator):
    """Reward of a transition: the expert-side discriminator logit.

    Equals -f(s, s') under the labeling above; see the module docstring.
    """
    s = np.asarray(s, dtype=np.float64)
    s_next = np.asarray(s_next, dtype=np.float64)
    pairs = np.concatenate([s, s_next], axis=-1)
    r = -np.asarray(disc.logit(pairs))
    if not np.all(np.isfinite(r)):
        raise FloatingPointError("discriminator logit is non-finite")
    return float(r) if pairs.ndim == 1 else r


@dataclass
class StepRecord:
    env_index: int
    t: int
    state: np.ndarray
    action: np.ndarray
    reward: float  # discriminator reward at collection time
    next_state: np.ndarray
    sigma: np.ndarray  # plan noise scale used for exploration at this step


class EpisodeAborted(RuntimeError):
    """Planner failure mid-episode; carries the records collected so far."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


class PiMppi:
    """The planner wrapped as an environment-interacting policy.

    Holds one warm-started plan per environment. In train mode the executed
    action is sampled from a Gaussian centered on the plan's first action
    with the plan's per-dimension weighted std (floored); in deploy mode the
    first action is executed exactly.
    """

    def __init__(self, planner: MppiPlanner, n_envs=1, sigma_floor=SIGMA_FLOOR):
        self.planner = planner
        self.n_envs = n_envs
        self.sigma_floor = sigma_floor
        cfg = planner.cfg
        self.plans = np.zeros((n_envs, cfg.horizon, planner.action_dim))
        self.sigmas = np.zeros((n_envs, planner.action_dim))

    def reset(self):
        self.plans[:] = 0.0
        self.sigmas[:] = 0.0

    def act_batch(self, states, plan_rngs, act_rngs, temperature, mode="train", keep_batch=False):
        """Plan for every env and pick actions; updates internal plan state."""
        if mode not in ("train", "deploy"):
            raise ValueError(f"unknown mode: {mode!r}")
        means, sigmas, batch = self.planner.plan(
            states, self.plans, plan_rngs, temperature, keep_batch=keep_batch
        )
        self.plans = means
        self.sigmas = sigmas
        first = means[:, 0, :]
        if mode == "deploy":
            actions = first.copy()
        else:
            noise = np.stack(
                [g.standard_normal(first.shape[1]) for g in act_rngs], axis=0
            )
            sig = np.maximum(sigmas, self.sigma_floor)
            actions = first + sig * noise
            np.clip(
                actions, self.planner.action_low, self.planner.action_high, out=actions
            )
        return actions, sigmas, batch

    def act(self, state, plan_rng, act_rng, temperature, mode="train"):
        a, s, _ = self.act_batch(
            np.asarray(state)[None], [plan_rng], [act_rng], temperature, mode
        )
        return a[0], s[0]


def make_policy(env, model, disc: Discriminator, value: ValueFunction, cfg: MppiConfig, n_envs=1):
    planner = MppiPlanner(
        model,
        disc.cost_fn(dtype=cfg.rollout_dtype, chunk=cfg.chunk),
        value.value_fn(dtype=cfg.rollout_dtype, chunk=cfg.chunk),
        cfg,
        env.action_low,
        env.action_high,
    )
    return PiMppi(planner, n_envs=n_envs)


def spawn_env_streams(seed, n_envs):
    """Per-env RNG triples (env noise, plan sampling, action noise).

    Streams are derived from the master seed by fixed spawn order, so the
    number of worker threads never changes the draws any env sees.
    """
    root = np.random.SeedSequence(seed)
    children = root.spawn(3 * n_envs)
    mk = lambda ss: np.random.Generator(np.random.SFC64(ss))
    env_rngs = [mk(children[3 * i]) for i in range(n_envs)]
    plan_rngs = [mk(children[3 * i + 1]) for i in range(n_envs)]
    act_rngs = [mk(children[3 * i + 2]) for i in range(n_envs)]
    return env_rngs, plan_rngs, act_rngs


@dataclass
class EpisodeBatch:
    """Vectorized per-iteration collection: E parallel envs, T steps each."""

    states: np.ndarray  # (E, T+1, S): visited states incl. final
    actions: np.ndarray  # (E, T, A)
    rewards: np.ndarray  # (E, T) discriminator rewards
    sigmas: np.ndarray  # (E, T, A)
    task_rewards: np.ndarray  # (E, T)

    def transition_pairs(self):
        e, tp1, s = self.states.shape
        return np.concatenate(
            [self.states[:, :-1], self.states[:, 1:]], axis=2
        ).reshape(e * (tp1 - 1), 2 * s)

    def records(self):
        out = []
        for e in range(self.states.shape[0]):
            for t in range(self.actions.shape[1]):
                out.append(
                    StepRecord(
                        env_index=e,
                        t=t,
                        state=self.states[e, t],
                        action=self.actions[e, t],
                        reward=float(self.rewards[e, t]),
                        next_state=self.states[e, t + 1],
                        sigma=self.sigmas[e, t],
                    )
                )
        return out


def collect_batch(env, pi: PiMppi, disc: Discriminator, seed, temperature, mode="train", init_states=None):
    """Run every env for one fixed-length episode under the policy.

    Rewards are computed with the discriminator as it stands now (i.e.
    before any update that follows the collection).
    """
    n_envs = pi.n_envs
    env_rngs, plan_rngs, act_rngs = spawn_env_streams(seed, n_envs)
    horizon = env.spec.horizon_steps
    sdim, adim = env.state_dim, env.action_dim
    if init_states is None:
        states = np.stack([env.reset(r) for r in env_rngs], axis=0)
    else:
        states = np.array(init_states, dtype=np.float64)
    pi.reset()
    out_states = np.empty((n_envs, horizon + 1, sdim))
    out_actions = np.empty((n_envs, horizon, adim))
    out_sigmas = np.empty((n_envs, horizon, adim))
    out_states[:, 0] = states
    for t in range(horizon):
        actions, sigmas, _ = pi.act_batch(states, plan_rngs, act_rngs, temperature, mode)
        states = env.step(states, actions, env_rngs)
        out_states[:, t + 1] = states
        out_actions[:, t] = actions
        out_sigmas[:, t] = sigmas
    pairs = np.concatenate([out_states[:, :-1], out_states[:, 1:]], axis=2)
    rewards = airl_reward(
        out_states[:, :-1].reshape(-1, sdim),
        out_states[:, 1:].reshape(-1, sdim),
        disc,
    ).reshape(n_envs, horizon)
    task = env.task_reward(out_states[:, 1:].reshape(-1, sdim)).reshape(n_envs, horizon)
    return EpisodeBatch(
        states=out_states,
        actions=out_actions,
        rewards=rewards,
        sigmas=out_sigmas,
        task_rewards=task,
    )


def collect_episode(env, pi: PiMppi, disc: Discriminator, seed, temperature, mode="train"):
    """Single-env episode as a list of StepRecords (E=1 view of collect_batch).

    A planner failure aborts the episode; the partial records collected up
    to the failing step are attached to the raised EpisodeAborted.
    """
    if pi.n_envs != 1:
        raise ValueError("collect_episode expects a single-env policy")
    from .planner import PlannerError

    env_rngs, plan_rngs, act_rngs = spawn_env_streams(seed, 1)
    s = env.reset(env_rngs[0])
    pi.reset()
    records = []
    for t in range(env.spec.horizon_steps):
        try:
            actions, sigmas, _ = pi.act_batch(s[None], plan_rngs, act_rngs, temperature, mode)
        except PlannerError as err:
            raise EpisodeAborted(f"planner failed at step {t}: {err}", records) from err
        s_next = env.step(s[None], actions, env_rngs)[0]
        records.append(
            StepRecord(
                env_index=0,
                t=t,
                state=s,
                action=actions[0],
                reward=airl_reward(s, s_next, disc),
                next_state=s_next,
                sigma=sigmas[0],
            )
        )
        s = s_next
    return records
