"""Predictive models for planner rollouts.

Two kinds: the analytic kinematic-bicycle prior (shares its step formula
with the slip-free environment, so the two agree exactly), and an MLP
dynamics model trained online from a replay buffer. The learned model
predicts the normalized state delta by default; both normalization and
delta prediction can be disabled, in which case the network output is the
next state verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import bicycle_step, wrap_angle
from .nets import Adam, LrSchedule, Mlp, NetFunction, RELU, forward_packed, pack_params


class AnalyticBicycle:
    """Euler-integrated kinematic bicycle; planner-side nominal model."""

    state_dim = 4
    action_dim = 2

    def __init__(self, dt=0.1, wheelbase=0.3, speed_gain=5.0):
        self.dt = dt
        self.wheelbase = wheelbase
        self.speed_gain = speed_gain

    def predict(self, state, action):
        state = np.asarray(state)
        action = np.asarray(action)
        if state.shape[-1] != self.state_dim or action.shape[-1] != self.action_dim:
            raise ValueError("state/action dimension mismatch")
        return bicycle_step(state, action, self.dt, self.wheelbase, self.speed_gain)

    def rollout(self, state0, plans):
        """Iterate predict over an (H, A) plan or an (B, H, A) batch of plans.

        Returns states with one more step than the plan length; invalid
        (non-finite) rollouts are left as-is for the caller to cost +inf.
        """
        plans = np.asarray(plans)
        single = plans.ndim == 2
        if single:
            plans = plans[None]
        state0 = np.asarray(state0, dtype=plans.dtype)
        if state0.ndim == 1:
            state0 = np.broadcast_to(state0, (plans.shape[0], self.state_dim))
        batch, horizon = plans.shape[0], plans.shape[1]
        states_t = np.empty((horizon + 1, batch, self.state_dim), dtype=plans.dtype)
        states_t[0] = state0
        self.rollout_into(states_t, np.ascontiguousarray(plans.transpose(1, 0, 2)))
        states = states_t.transpose(1, 0, 2).copy()
        return states[0] if single else states

    def rollout_into(self, states, plans):
        """In-place timestep-major rollout: states (H+1, B, S) with states[0]
        preset; plans (H, B, A)."""
        dt, wb, k = states.dtype.type(self.dt), self.wheelbase, self.speed_gain
        for t in range(plans.shape[0]):
            st = states[t]
            x, y, yaw, v = st[:, 0], st[:, 1], st[:, 2], st[:, 3]
            v_t, steer = plans[t, :, 0], plans[t, :, 1]
            nxt = states[t + 1]
            nxt[:, 0] = x + dt * v * np.cos(yaw)
            nxt[:, 1] = y + dt * v * np.sin(yaw)
            nxt[:, 2] = yaw + dt * v * np.tan(steer) / wb
            nxt[:, 3] = v + dt * k * (v_t - v)


class ReplayBuffer:
    """Fixed-capacity (s, a, s') store with uniform random replacement."""

    def __init__(self, capacity, state_dim, action_dim, seed=0):
        self.capacity = int(capacity)
        self.s = np.zeros((self.capacity, state_dim))
        self.a = np.zeros((self.capacity, action_dim))
        self.s2 = np.zeros((self.capacity, state_dim))
        self.size = 0
        self.rng = np.random.Generator(np.random.SFC64(seed))

    def insert(self, s, a, s2):
        s, a, s2 = (np.atleast_2d(np.asarray(v)) for v in (s, a, s2))
        for i in range(len(s)):
            if self.size < self.capacity:
                idx = self.size
                self.size += 1
            else:
                idx = int(self.rng.integers(0, self.capacity))
            self.s[idx] = s[i]
            self.a[idx] = a[i]
            self.s2[idx] = s2[i]

    def sample(self, batch_size, rng):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return self.s[idx], self.a[idx], self.s2[idx]


@dataclass
class DynamicsTrainStats:
    losses: list
    lr: float


class LearnedDynamics:
    """MLP dynamics f(s, a) -> s' trained by mean squared error.

    Inputs are standardized with running statistics from the buffer and the
    network regresses the standardized delta (s' - s); ``predict`` undoes
    both, so the transform is invisible at the contract level.
    """

    def __init__(
        self,
        state_dim,
        action_dim,
        hidden_width=64,
        hidden_layers=3,
        lr_schedule: LrSchedule | None = None,
        seed=0,
        normalize=True,
        predict_delta=True,
        angle_dims=(),
        adam_betas=(0.9, 0.999),
    ):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.normalize = normalize
        self.predict_delta = predict_delta
        self.angle_dims = tuple(angle_dims)  # delta targets wrapped to (-pi, pi]
        widths = [state_dim + action_dim] + [hidden_width] * hidden_layers + [state_dim]
        rng = np.random.Generator(np.random.SFC64(seed))
        self.mlp = Mlp.build(widths, hidden_activation=RELU, rng=rng)
        self.schedule = lr_schedule or LrSchedule(
            base_lr=1e-3, decay_rate=0.9, decay_every_episodes=15, min_lr=1e-6
        )
        self.adam = Adam(
            self.mlp, lr=self.schedule.base_lr, beta1=adam_betas[0], beta2=adam_betas[1]
        )
        self.episodes_seen = 0
        self.in_mean = np.zeros(state_dim + action_dim)
        self.in_std = np.ones(state_dim + action_dim)
        self.out_mean = np.zeros(state_dim)
        self.out_std = np.ones(state_dim)
        self._packed = None

    def _delta(self, s, s2):
        d = s2 - s
        if self.angle_dims:
            d = np.array(d, copy=True)
            d[..., self.angle_dims] = wrap_angle(d[..., self.angle_dims])
        return d

    def refresh_stats(self, buffer: ReplayBuffer):
        if not self.normalize or buffer.size == 0:
            return
        xs = np.concatenate([buffer.s[: buffer.size], buffer.a[: buffer.size]], axis=1)
        if self.predict_delta:
            ys = self._delta(buffer.s[: buffer.size], buffer.s2[: buffer.size])
        else:
            ys = buffer.s2[: buffer.size]
        self.in_mean = xs.mean(axis=0)
        self.in_std = np.maximum(xs.std(axis=0), 1e-6)
        self.out_mean = ys.mean(axis=0)
        self.out_std = np.maximum(ys.std(axis=0), 1e-6)
        self._packed = None

    def _net_target(self, s, a, s2):
        x = (np.concatenate([s, a], axis=-1) - self.in_mean) / self.in_std
        y = (self._delta(s, s2) if self.predict_delta else s2) - self.out_mean
        return x, y / self.out_std

    def predict(self, state, action):
        state = np.asarray(state, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64)
        if state.shape[-1] != self.state_dim or action.shape[-1] != self.action_dim:
            raise ValueError("state/action dimension mismatch")
        x = np.concatenate([state, action], axis=-1)
        x = (x - self.in_mean) / self.in_std
        out = self.mlp.forward(np.atleast_2d(x)) * self.out_std + self.out_mean
        if self.predict_delta:
            out = out + np.atleast_2d(state)
            if self.angle_dims:
                out[..., self.angle_dims] = wrap_angle(out[..., self.angle_dims])
        return out[0] if state.ndim == 1 else out

    def update(self, buffer: ReplayBuffer, epochs, batch_size, rng) -> DynamicsTrainStats:
        """Epochs of shuffled minibatch MSE training over the buffer.

        The loss per minibatch is the mean squared error between predicted
        and observed next states; LR follows the per-episode decay schedule.
        """
        if buffer.size == 0:
            raise ValueError("buffer is empty")
        if batch_size <= 0:
            raise ValueError("batch_size must be >= 1")
        self.refresh_stats(buffer)
        lr = self.schedule.value(self.episodes_seen)
        losses = []
        for _ in range(epochs):
            order = rng.permutation(buffer.size)
            for lo in range(0, buffer.size, batch_size):
                idx = order[lo : lo + batch_size]
                s, a, s2 = buffer.s[idx], buffer.a[idx], buffer.s2[idx]
                x, y = self._net_target(s, a, s2)
                pred, cache = self.mlp.forward_cached(x)
                err = pred - y
                loss = float(np.sum(err * err) / len(x))
                if not np.isfinite(loss):
                    raise FloatingPointError("dynamics loss diverged (non-finite)")
                grads, _ = self.mlp.backward(cache, 2.0 * err / len(x))
                self.adam.step(self.mlp, grads, lr=lr)
                losses.append(loss)
        self._packed = None
        return DynamicsTrainStats(losses=losses, lr=lr)

    def end_episode(self, n=1):
        self.episodes_seen += n

    def save(self, path):
        import json

        from .nets import CKPT_FORMAT, CKPT_VERSION

        doc = {
            "format": "mpail-dyn",
            "version": CKPT_VERSION,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "normalize": self.normalize,
            "predict_delta": self.predict_delta,
            "angle_dims": list(self.angle_dims),
            "episodes_seen": self.episodes_seen,
            "in_mean": self.in_mean.tolist(),
            "in_std": self.in_std.tolist(),
            "out_mean": self.out_mean.tolist(),
            "out_std": self.out_std.tolist(),
            "layers": [
                {
                    "in": l.in_width,
                    "out": l.out_width,
                    "activation": l.activation,
                    "spectral_norm": l.spectral_norm,
                    "weight": l.weight.reshape(-1).tolist(),
                    "bias": l.bias.tolist(),
                    "power_u": None if l.power_u is None else l.power_u.tolist(),
                }
                for l in self.mlp.layers
            ],
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f)

    @classmethod
    def load(cls, path):
        import json

        from .nets import Layer, Mlp

        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        if doc.get("format") != "mpail-dyn":
            raise ValueError(f"{path}: not a dynamics checkpoint")
        model = cls.__new__(cls)
        model.state_dim = doc["state_dim"]
        model.action_dim = doc["action_dim"]
        model.normalize = doc["normalize"]
        model.predict_delta = doc["predict_delta"]
        model.angle_dims = tuple(doc.get("angle_dims", ()))
        model.episodes_seen = doc["episodes_seen"]
        model.in_mean = np.array(doc["in_mean"])
        model.in_std = np.array(doc["in_std"])
        model.out_mean = np.array(doc["out_mean"])
        model.out_std = np.array(doc["out_std"])
        layers = []
        for spec in doc["layers"]:
            w = np.array(spec["weight"]).reshape(spec["out"], spec["in"])
            u = spec.get("power_u")
            layers.append(
                Layer(
                    weight=w,
                    bias=np.array(spec["bias"]),
                    activation=spec["activation"],
                    spectral_norm=bool(spec["spectral_norm"]),
                    power_u=None if u is None else np.array(u),
                )
            )
        model.mlp = Mlp(layers)
        model.schedule = LrSchedule(base_lr=1e-3)
        model.adam = Adam(model.mlp, lr=1e-3)
        model._packed = None
        return model

    # -- planner-side fast path ------------------------------------------

    def _ensure_packed(self, dtype):
        if self._packed is None or self._packed[0] != np.dtype(dtype):
            dt = np.dtype(dtype)
            self._packed = (
                dt,
                pack_params(self.mlp, dt),
                self.in_mean.astype(dt),
                self.in_std.astype(dt),
                self.out_mean.astype(dt),
                self.out_std.astype(dt),
            )
        return self._packed

    def rollout(self, state0, plans):
        plans = np.asarray(plans)
        single = plans.ndim == 2
        if single:
            plans = plans[None]
        state0 = np.asarray(state0, dtype=plans.dtype)
        if state0.ndim == 1:
            state0 = np.broadcast_to(state0, (plans.shape[0], self.state_dim))
        batch, horizon = plans.shape[0], plans.shape[1]
        states_t = np.empty((horizon + 1, batch, self.state_dim), dtype=plans.dtype)
        states_t[0] = state0
        self.rollout_into(states_t, np.ascontiguousarray(plans.transpose(1, 0, 2)))
        states = states_t.transpose(1, 0, 2).copy()
        return states[0] if single else states

    def rollout_into(self, states, plans):
        """Timestep-major in-place rollout; states (H+1, B, S), plans (H, B, A)."""
        dt = states.dtype
        _, packed, in_mean, in_std, out_mean, out_std = self._ensure_packed(dt)
        batch = states.shape[1]
        x = np.empty((batch, self.state_dim + self.action_dim), dtype=dt)
        for t in range(plans.shape[0]):
            x[:, : self.state_dim] = states[t]
            x[:, self.state_dim :] = plans[t]
            x -= in_mean
            x /= in_std
            out = forward_packed(packed, x)
            out *= out_std
            out += out_mean
            if self.predict_delta:
                out += states[t]
                if self.angle_dims:
                    out[:, self.angle_dims] = wrap_angle(out[:, self.angle_dims])
            states[t + 1] = out
