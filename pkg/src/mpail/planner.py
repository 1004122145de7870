"""Sampling-based MPC: iterated sampling, rollout, costing, softmin reweighting.

One planning call shifts the previous optimal plan forward, then runs J
rounds of {sample N plans around the mean, roll out under the model, cost
each trajectory with per-step transition costs plus a terminal value,
softmin-weight, reset the mean to the weighted average}. The returned plan
carries per-dimension weighted standard deviations of the first action,
which the policy uses as exploration noise.

Costs use a per-step markup factor eta: C = sum_t eta^t c_t - eta^H V(s_H).
Weights subtract the per-batch minimum cost inside the exponential; this is
exactly invariant (weights are a function of cost differences only).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class PlannerError(RuntimeError):
    pass


def _eval(fn, x, out):
    """Call a cost/value function, passing the output buffer only when the
    callable opts in (NetFunction does; plain callables need not)."""
    if getattr(fn, "supports_out", False):
        return fn(x, out=out)
    return fn(x)


@dataclass
class MppiConfig:
    n_samples: int = 512
    horizon: int = 10
    n_iterations: int = 5  # optimization rounds per planning call
    sample_variance: tuple = (0.3,)  # diagonal sampling covariance, per action dim
    temperature: float = 1.0
    markup: float = 1.01
    use_cost: bool = True
    use_value: bool = True
    rollout_dtype: str = "float64"
    chunk: int = 4096

    def validate(self):
        problems = []
        if self.n_samples < 1:
            problems.append("n_samples must be >= 1")
        if self.horizon < 1:
            problems.append("horizon must be >= 1")
        if self.n_iterations < 1:
            problems.append("n_iterations must be >= 1")
        if self.temperature <= 0:
            problems.append("temperature must be > 0")
        if any(v <= 0 for v in np.atleast_1d(self.sample_variance)):
            problems.append("sample_variance entries must be > 0")
        if self.markup <= 0:
            problems.append("markup must be > 0")
        if self.rollout_dtype not in ("float32", "float64"):
            problems.append("rollout_dtype must be float32 or float64")
        if problems:
            raise ValueError("; ".join(problems))
        if self.use_cost and self.markup < 1.0:
            warnings.warn(
                "markup < 1 discounts step costs toward zero; training is known "
                "not to converge in this regime",
                stacklevel=2,
            )

    def std_vector(self, action_dim):
        var = np.atleast_1d(np.asarray(self.sample_variance, dtype=np.float64))
        if var.size == 1:
            var = np.full(action_dim, var[0])
        if var.size != action_dim:
            raise ValueError("sample_variance length does not match action dim")
        return np.sqrt(var)


@dataclass
class Plan:
    actions: np.ndarray  # (H, action_dim)
    sigma: np.ndarray  # (action_dim,) weighted std of the first action

    @classmethod
    def zeros(cls, horizon, action_dim):
        return cls(np.zeros((horizon, action_dim)), np.zeros(action_dim))


@dataclass
class RolloutBatch:
    states: np.ndarray  # (N, H+1, S)
    actions: np.ndarray  # (N, H, A)
    step_costs: np.ndarray  # (N, H)
    traj_costs: np.ndarray  # (N,)
    weights: np.ndarray  # (N,)

    def to_csv(self, path):
        n, hp1, dim = self.states.shape
        cols = ",".join(f"s{i}" for i in range(dim))
        lines = [f"sample,t,{cols},traj_cost,weight"]
        for k in range(n):
            for t in range(hp1):
                vals = ",".join(f"{v:.9g}" for v in self.states[k, t])
                lines.append(
                    f"{k},{t},{vals},{self.traj_costs[k]:.9g},{self.weights[k]:.9g}"
                )
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines) + "\n")


def shift_actions(actions):
    """Advance a plan one timestep: drop the first action, append zeros."""
    out = np.empty_like(actions)
    out[..., :-1, :] = actions[..., 1:, :]
    out[..., -1, :] = 0.0
    return out


def shift_plan(plan: Plan) -> Plan:
    return Plan(actions=shift_actions(plan.actions), sigma=np.zeros_like(plan.sigma))


def sample_plans(mean_actions, std, n, rng, low=None, high=None, dtype=np.float64):
    """n i.i.d. Gaussian plans around the mean, clamped to action bounds."""
    mean_actions = np.asarray(mean_actions)
    horizon, adim = mean_actions.shape
    dt = np.dtype(dtype)
    eps = rng.standard_normal((n, horizon, adim), dtype=dt)
    acts = eps * np.asarray(std, dtype=dt) + mean_actions.astype(dt)
    if low is not None:
        np.clip(acts, np.asarray(low, dtype=dt), np.asarray(high, dtype=dt), out=acts)
    return acts


def softmin_weights(traj_costs, temperature):
    """exp(-(C - min C)/lambda), normalized. Requires one finite cost."""
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    c = np.asarray(traj_costs, dtype=np.float64)
    finite = np.isfinite(c)
    if not finite.any():
        raise PlannerError("no valid rollouts: all trajectory costs are +inf")
    m = c[finite].min()
    w = np.zeros_like(c)
    w[finite] = np.exp(-(c[finite] - m) / temperature)
    w /= w.sum()
    return w


def trajectory_cost(
    states, cost_fn, value_fn, markup, use_cost=True, use_value=True
):
    """Marked-up step costs plus discounted-away terminal value.

    ``states`` is (H+1, S) or (B, H+1, S); cost_fn maps (..., 2S) transition
    pairs to scalars, value_fn maps (..., S) states to scalars. Returns
    (traj_costs, step_costs); non-finite trajectories cost +inf.
    """
    states = np.asarray(states)
    single = states.ndim == 2
    if single:
        states = states[None]
    b, hp1, dim = states.shape
    horizon = hp1 - 1
    if use_cost:
        pairs = np.concatenate([states[:, :-1], states[:, 1:]], axis=2)
        step = np.asarray(cost_fn(pairs.reshape(b * horizon, 2 * dim)), dtype=np.float64)
        step = step.reshape(b, horizon)
    else:
        step = np.zeros((b, horizon))
    coef = markup ** np.arange(horizon)
    total = step @ coef
    if use_value:
        terminal = np.asarray(value_fn(states[:, -1]), dtype=np.float64).reshape(b)
        total = total - markup**horizon * terminal
    bad = ~(np.isfinite(states).all(axis=(1, 2)) & np.isfinite(total))
    total = np.where(bad, np.inf, total)
    if single:
        return float(total[0]), step[0]
    return total, step


class MppiPlanner:
    """Batched planning engine shared by all environments in a worker.

    ``step_cost`` and ``terminal_value`` are callables on stacked rows (the
    NetFunction wrappers); ``model`` provides rollout_into. All sampling is
    pre-generated from per-environment streams, so results are independent
    of how the batch is executed.
    """

    def __init__(self, model, step_cost, terminal_value, cfg: MppiConfig, action_low, action_high):
        cfg.validate()
        self.model = model
        self.step_cost = step_cost
        self.terminal_value = terminal_value
        self.cfg = cfg
        self.action_low = np.asarray(action_low, dtype=np.float64)
        self.action_high = np.asarray(action_high, dtype=np.float64)
        self.action_dim = self.action_low.size
        self.state_dim = model.state_dim
        self.dtype = np.dtype(cfg.rollout_dtype)
        self.std = cfg.std_vector(self.action_dim).astype(self.dtype)
        h = cfg.horizon
        self.eta_pow = (cfg.markup ** np.arange(h)).astype(self.dtype)
        self.eta_h = self.dtype.type(cfg.markup**h)
        self._bufs = None

    def _buffers(self, n_envs):
        if self._bufs is not None and self._bufs["E"] == n_envs:
            return self._bufs
        cfg, dt = self.cfg, self.dtype
        b = n_envs * cfg.n_samples
        h = cfg.horizon
        # timestep-major layouts keep every per-step slab contiguous
        self._bufs = {
            "E": n_envs,
            "acts": np.empty((n_envs, cfg.n_samples, h, self.action_dim), dt),
            "acts_t": np.empty((h, b, self.action_dim), dt),
            "states": np.empty((h + 1, b, self.state_dim), dt),
            "pairs": np.empty((h, b, 2 * self.state_dim), dt),
            "costs": np.empty((h * b, 1), dt),
            "terms": np.empty((b, 1), dt),
        }
        return self._bufs

    def plan(self, states, prev_actions, rngs, temperature, keep_batch=False):
        """One planning call for a batch of environments.

        states: (E, S); prev_actions: (E, H, A); rngs: one Generator per env.
        Returns (means (E, H, A) float64, sigmas (E, A) float64, batch|None).
        """
        cfg = self.cfg
        states = np.atleast_2d(np.asarray(states))
        n_envs = states.shape[0]
        if len(rngs) != n_envs:
            raise ValueError("need one rng per environment")
        bufs = self._buffers(n_envs)
        dt = self.dtype
        n, h, a = cfg.n_samples, cfg.horizon, self.action_dim
        sdim = self.state_dim
        b = n_envs * n
        acts = bufs["acts"]
        acts_t = bufs["acts_t"]
        roll = bufs["states"]
        pairs = bufs["pairs"]
        mean = shift_actions(np.asarray(prev_actions, dtype=np.float64)).astype(dt)
        lo = self.action_low.astype(dt)
        hi = self.action_high.astype(dt)
        roll[0].reshape(n_envs, n, sdim)[:] = states[:, None]
        weights = None
        for _ in range(cfg.n_iterations):
            for e in range(n_envs):
                rngs[e].standard_normal(out=acts[e].reshape(-1), dtype=dt)
            acts *= self.std
            acts += mean[:, None]
            np.maximum(acts, lo, out=acts)
            np.minimum(acts, hi, out=acts)
            np.copyto(acts_t, acts.reshape(b, h, a).transpose(1, 0, 2))
            self.model.rollout_into(roll, acts_t)
            valid = np.isfinite(roll[h]).all(axis=1)  # non-finite states only propagate
            pairs[:, :, :sdim] = roll[:-1]
            pairs[:, :, sdim:] = roll[1:]
            if cfg.use_cost:
                step = _eval(self.step_cost, pairs.reshape(h * b, 2 * sdim), bufs["costs"])
                total = self.eta_pow @ np.asarray(step).reshape(h, b)
                self._check_net(total, valid, self.step_cost)
            else:
                total = np.zeros(b, dtype=dt)
            if cfg.use_value:
                term = _eval(self.terminal_value, roll[h], bufs["terms"])
                self._check_net(term, valid, self.terminal_value)
                total = total - self.eta_h * np.asarray(term)
            total = total.astype(np.float64)
            total[~valid] = np.inf
            ce = total.reshape(n_envs, n)
            if not np.isfinite(ce).any(axis=1).all():
                raise PlannerError("no valid rollouts: all trajectory costs are +inf")
            m = np.min(np.where(np.isfinite(ce), ce, np.inf), axis=1, keepdims=True)
            weights = np.exp(np.where(np.isfinite(ce), -(ce - m) / temperature, -np.inf))
            weights /= weights.sum(axis=1, keepdims=True)
            mean = np.einsum("en,enha->eha", weights.astype(dt), acts)
        diff = acts[:, :, 0, :].astype(np.float64) - mean[:, None, 0, :].astype(np.float64)
        sigma = np.sqrt(np.einsum("en,ena->ea", weights, diff * diff))
        batch = None
        if keep_batch:
            if cfg.use_cost:
                step_full = (
                    np.asarray(bufs["costs"]).reshape(h, n_envs, n).astype(np.float64)
                )
                step_first = step_full[:, 0].T.copy()  # (N, H)
            else:
                step_first = np.zeros((n, h))
            batch = RolloutBatch(
                states=roll.reshape(h + 1, n_envs, n, sdim)[:, 0]
                .transpose(1, 0, 2)
                .astype(np.float64)
                .copy(),
                actions=acts[0].astype(np.float64).copy(),
                step_costs=step_first,
                traj_costs=total.reshape(n_envs, n)[0].copy(),
                weights=weights[0].copy(),
            )
        return mean.astype(np.float64), sigma, batch

    @staticmethod
    def _check_net(values, valid_mask, net):
        bad = ~np.isfinite(np.asarray(values).reshape(-1)) & np.asarray(valid_mask)
        if bad.any():
            name = getattr(net, "name", net.__class__.__name__)
            raise PlannerError(f"{name} produced non-finite output on finite states")


def mppi_plan(
    state,
    prev_plan: Plan,
    model,
    step_cost,
    terminal_value,
    cfg: MppiConfig,
    rng,
    action_low,
    action_high,
    temperature=None,
):
    """Single-environment planning call returning (Plan, RolloutBatch)."""
    planner = MppiPlanner(model, step_cost, terminal_value, cfg, action_low, action_high)
    temperature = cfg.temperature if temperature is None else temperature
    means, sigmas, batch = planner.plan(
        np.asarray(state)[None],
        np.asarray(prev_plan.actions)[None],
        [rng],
        temperature,
        keep_batch=True,
    )
    return Plan(actions=means[0], sigma=sigmas[0]), batch
