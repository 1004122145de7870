"""Flat key=value run configuration with sections and strict validation.

The format is deliberately plain so resolved snapshots diff cleanly inside
run directories:

    [run]
    env = nav
    seed = 1

Unknown sections or keys are rejected, every violated field is reported in
one error, and ``resolve()`` produces a complete snapshot (all keys, final
values) that fully determines a run together with nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .dynamics import AnalyticBicycle, LearnedDynamics
from .envs import CartpoleEnv, CartpoleParams, EpisodeSpec, NavEnv, NavParams
from .nets import LrSchedule
from .planner import MppiConfig
from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class Field:
    kind: str  # int | float | bool | str | floatlist
    default: object
    lo: float = None
    hi: float = None
    choices: tuple = None


SCHEMA = {
    "run": {
        "env": Field("str", "nav", choices=("nav", "cartpole")),
        "model": Field("str", "analytic", choices=("analytic", "learned")),
        "demos": Field("str", ""),
        "out": Field("str", "runs/default"),
        "seed": Field("int", 0, lo=0),
        "iterations": Field("int", 300, lo=0),
    },
    "env": {
        "horizon_steps": Field("int", 100, lo=1),
        "dt": Field("float", 0.1, lo=1e-6),
        "init_box_side": Field("float", 2.0, lo=0.0),
        "slip": Field("bool", True),
        "wheelbase": Field("float", 0.3, lo=1e-3),
        "speed_gain": Field("float", 5.0, lo=1e-3),
        "slip_gain": Field("float", 0.1, lo=0.0),
        "slip_noise_std": Field("float", 0.01, lo=0.0),
    },
    "mppi": {
        "n_samples": Field("int", 512, lo=1),
        "horizon": Field("int", 10, lo=1),
        "n_iterations": Field("int", 5, lo=1),
        "sample_variance": Field("floatlist", (0.3,)),
        "markup": Field("float", 1.01, lo=1e-9),
        "use_cost": Field("bool", True),
        "use_value": Field("bool", True),
        "rollout_dtype": Field("str", "float32", choices=("float32", "float64")),
        "chunk": Field("int", 4096, lo=64),
    },
    "train": {
        "n_envs": Field("int", 64, lo=1),
        "disc_lr": Field("float", 1e-4, lo=0.0),
        "disc_beta1": Field("float", 0.5, lo=0.0, hi=1.0),
        "disc_beta2": Field("float", 0.999, lo=0.0, hi=1.0),
        "disc_width": Field("int", 32, lo=1),
        "disc_hidden_layers": Field("int", 2, lo=1),
        "disc_l2": Field("float", 0.0, lo=0.0),
        "disc_spectral_norm": Field("bool", True),
        "value_lr": Field("float", 1e-3, lo=0.0),
        "value_beta1": Field("float", 0.9, lo=0.0, hi=1.0),
        "value_beta2": Field("float", 0.999, lo=0.0, hi=1.0),
        "value_width": Field("int", 32, lo=1),
        "value_hidden_layers": Field("int", 2, lo=1),
        "value_clip": Field("float", 0.2, lo=0.0),
        "value_grad_norm": Field("float", 1.0, lo=1e-9),
        "gamma": Field("float", 0.99, lo=0.0, hi=1.0),
        "gae_lambda": Field("float", 0.95, lo=0.0, hi=1.0),
        "minibatches": Field("int", 3, lo=1),
        "epochs": Field("int", 3, lo=1),
        "value_updates_per_disc": Field("int", 3, lo=1),
        "temp_init": Field("float", 1.0, lo=1e-12),
        "temp_decay": Field("float", 0.01, lo=0.0, hi=1.0),
        "temp_min": Field("float", 1e-5, lo=1e-12),
        "checkpoint_every": Field("int", 50, lo=1),
        "dyn_lr": Field("float", 1e-3, lo=0.0),
        "dyn_width": Field("int", 64, lo=1),
        "dyn_hidden_layers": Field("int", 3, lo=1),
        "dyn_lr_decay": Field("float", 0.9, lo=0.0, hi=1.0),
        "dyn_lr_decay_every": Field("int", 15, lo=1),
        "dyn_min_lr": Field("float", 1e-6, lo=0.0),
        "dyn_buffer_capacity": Field("int", 20000, lo=1),
        "dyn_batch_size": Field("int", 256, lo=1),
        "dyn_epochs": Field("int", 1, lo=1),
        "log_episodes": Field("bool", False),
    },
}


def _parse_value(raw, spec: Field, where, problems):
    raw = raw.strip()
    try:
        if spec.kind == "int":
            val = int(raw)
        elif spec.kind == "float":
            val = float(raw)
        elif spec.kind == "bool":
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError("expected true/false")
            val = raw.lower() in ("true", "1")
        elif spec.kind == "floatlist":
            val = tuple(float(v) for v in raw.split(",") if v.strip())
            if not val:
                raise ValueError("expected comma-separated floats")
        else:
            val = raw
    except ValueError as err:
        problems.append(f"{where}: cannot parse {raw!r} as {spec.kind} ({err})")
        return None
    if spec.kind in ("int", "float"):
        if spec.lo is not None and val < spec.lo:
            problems.append(f"{where}: {val} below minimum {spec.lo}")
        if spec.hi is not None and val > spec.hi:
            problems.append(f"{where}: {val} above maximum {spec.hi}")
    if spec.choices is not None and val not in spec.choices:
        problems.append(f"{where}: {val!r} not one of {spec.choices}")
    return val


def parse_config_text(text):
    """Parse into {section: {key: value}} with full-schema validation."""
    values = {sec: dict() for sec in SCHEMA}
    problems = []
    section = None
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SCHEMA:
                problems.append(f"line {ln}: unknown section [{section}]")
                section = None
            continue
        if "=" not in stripped:
            problems.append(f"line {ln}: expected key = value, got {stripped!r}")
            continue
        if section is None:
            problems.append(f"line {ln}: key outside any known section")
            continue
        key, raw = (part.strip() for part in stripped.split("=", 1))
        spec = SCHEMA[section].get(key)
        if spec is None:
            problems.append(f"line {ln}: unknown key {section}.{key}")
            continue
        val = _parse_value(raw, spec, f"{section}.{key}", problems)
        if val is not None:
            values[section][key] = val
    if problems:
        raise ConfigError(problems)
    return values


def resolve(values=None, overrides=None):
    """Fill defaults for every schema key; overrides are (section, key, value)."""
    out = {sec: {k: f.default for k, f in keys.items()} for sec, keys in SCHEMA.items()}
    for src in (values or {},):
        for sec, kv in src.items():
            out[sec].update(kv)
    for sec, key, value in overrides or ():
        out[sec][key] = value
    return out


def format_resolved(resolved):
    lines = []
    for sec in SCHEMA:
        lines.append(f"[{sec}]")
        for key, spec in SCHEMA[sec].items():
            val = resolved[sec][key]
            if spec.kind == "bool":
                txt = "true" if val else "false"
            elif spec.kind == "floatlist":
                txt = ",".join(f"{v:.17g}" for v in val)
            elif spec.kind == "float":
                txt = f"{val:.17g}"
            else:
                txt = str(val)
            lines.append(f"{key} = {txt}")
        lines.append("")
    return "\n".join(lines)


def load_config(path=None, overrides=None):
    if path is None:
        return resolve(None, overrides)
    with open(path, "r", encoding="utf-8") as f:
        return resolve(parse_config_text(f.read()), overrides)


# ---------------------------------------------------------------------------
# Factories from a resolved config


def episode_spec(resolved):
    env = resolved["env"]
    heading = (-np.pi, np.pi)
    return EpisodeSpec(
        horizon_steps=env["horizon_steps"],
        dt=env["dt"],
        init_box_side=env["init_box_side"],
        heading_range=heading,
    )


def make_env(resolved):
    name = resolved["run"]["env"]
    env = resolved["env"]
    spec = episode_spec(resolved)
    if name == "nav":
        params = NavParams(
            wheelbase=env["wheelbase"],
            speed_gain=env["speed_gain"],
            slip=env["slip"],
            slip_gain=env["slip_gain"],
            slip_noise_std=env["slip_noise_std"],
        )
        return NavEnv(params=params, spec=spec)
    return CartpoleEnv(params=CartpoleParams(), spec=spec)


def make_model(resolved, seed_offset=7):
    kind = resolved["run"]["model"]
    env = make_env(resolved)
    if kind == "analytic":
        if resolved["run"]["env"] != "nav":
            raise ConfigError(["run.model: analytic model is only defined for the nav env"])
        e = resolved["env"]
        return AnalyticBicycle(
            dt=e["dt"], wheelbase=e["wheelbase"], speed_gain=e["speed_gain"]
        )
    t = resolved["train"]
    return LearnedDynamics(
        state_dim=env.state_dim,
        action_dim=env.action_dim,
        hidden_width=t["dyn_width"],
        hidden_layers=t["dyn_hidden_layers"],
        lr_schedule=LrSchedule(
            base_lr=t["dyn_lr"],
            decay_rate=t["dyn_lr_decay"],
            decay_every_episodes=t["dyn_lr_decay_every"],
            min_lr=t["dyn_min_lr"],
        ),
        seed=resolved["run"]["seed"] + seed_offset,
        angle_dims=(2,),  # both envs carry their angle in dim 2
    )


def make_mppi_config(resolved) -> MppiConfig:
    m = resolved["mppi"]
    return MppiConfig(
        n_samples=m["n_samples"],
        horizon=m["horizon"],
        n_iterations=m["n_iterations"],
        sample_variance=m["sample_variance"],
        temperature=resolved["train"]["temp_init"],
        markup=m["markup"],
        use_cost=m["use_cost"],
        use_value=m["use_value"],
        rollout_dtype=m["rollout_dtype"],
        chunk=m["chunk"],
    )


def make_train_config(resolved) -> TrainConfig:
    t = resolved["train"]
    kwargs = {f.name: t[f.name] for f in fields(TrainConfig) if f.name in t}
    return TrainConfig(
        iterations=resolved["run"]["iterations"], seed=resolved["run"]["seed"], **kwargs
    )
