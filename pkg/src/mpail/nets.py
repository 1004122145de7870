"""Minimal dense-network stack: MLP forward/backward, Adam, spectral norm.

All parameters and training math live in float64. Planner-side batch
evaluation goes through float32 snapshots of the applied weights (see
``NetFunction``), which is the only place reduced precision is allowed.

Gradients returned by ``Mlp.backward`` are taken with respect to the
*applied* weights (after spectral projection). Updates are applied to the
raw weights and the projection is refreshed afterwards; with spectral norm
off, raw and applied weights coincide and gradients are exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

RELU = "relu"
LEAKY_RELU = "leaky_relu"
IDENTITY = "identity"
ACTIVATIONS = (RELU, LEAKY_RELU, IDENTITY)

LEAKY_SLOPE = 0.01
SIGMA_EPS = 1e-12
WARMUP_POWER_ITERS = 20

CKPT_FORMAT = "mpail-mlp"
CKPT_VERSION = 1


class ShapeError(ValueError):
    """Input width does not match the layer it is fed into."""


class NonFiniteGradientError(FloatingPointError):
    """An update was attempted with NaN/inf gradients."""


def _activate(z, kind):
    if kind == RELU:
        return np.maximum(z, 0.0)
    if kind == LEAKY_RELU:
        return np.where(z > 0.0, z, LEAKY_SLOPE * z)
    return z


def _activate_grad(z, kind):
    if kind == RELU:
        return (z > 0.0).astype(z.dtype)
    if kind == LEAKY_RELU:
        return np.where(z > 0.0, 1.0, LEAKY_SLOPE)
    return np.ones_like(z)


@dataclass
class Layer:
    weight: np.ndarray  # (out, in), float64
    bias: np.ndarray  # (out,), float64
    activation: str
    spectral_norm: bool = False
    power_u: np.ndarray | None = None  # (out,) unit vector for power iteration
    applied: np.ndarray | None = None  # weight after spectral projection

    @property
    def in_width(self):
        return self.weight.shape[1]

    @property
    def out_width(self):
        return self.weight.shape[0]


def spectral_normalize(layer: Layer, n_iters: int = 1) -> np.ndarray:
    """Power-iteration refinement plus projection.

    Runs ``n_iters`` power-iteration updates of the stored left singular
    vector, then estimates sigma = ||W^T u|| and divides by it only when it
    exceeds 1 (matrices already inside the unit spectral ball pass through
    unchanged). With n_iters=0 the applied weight is a pure function of
    (weight, power_u), which is what makes checkpoint reload reproduce the
    applied weights exactly. Returns the applied weight.
    """
    w = layer.weight
    if not layer.spectral_norm:
        layer.applied = w
        return w
    u = layer.power_u
    if u is None:
        # seed with the exact top singular pair so the contraction bound
        # holds from the first application even when singular values cluster;
        # power iteration only has to track drift afterwards
        if np.linalg.norm(w) <= SIGMA_EPS:
            u = np.ones(w.shape[0]) / np.sqrt(w.shape[0])
        else:
            u = np.linalg.svd(w, compute_uv=True)[0][:, 0]
    for _ in range(n_iters):
        v = w.T @ u
        v_norm = np.linalg.norm(v)
        if v_norm <= SIGMA_EPS:  # zero matrix: keep state
            break
        v /= v_norm
        u_new = w @ v
        u_norm = np.linalg.norm(u_new)
        if u_norm <= SIGMA_EPS:
            break
        u = u_new / u_norm
    layer.power_u = u
    sigma = float(np.linalg.norm(w.T @ u))
    if sigma > 1.0:
        layer.applied = w / max(sigma, SIGMA_EPS)
    else:
        layer.applied = w
    return layer.applied


class Mlp:
    """Fixed-topology dense network with analytic gradients.

    ``forward`` is pure and accepts a single vector or a (batch, in) matrix.
    ``forward_cached``/``backward`` implement backprop for training.
    """

    def __init__(self, layers: list[Layer], warmup_iters=None):
        for a, b in zip(layers[:-1], layers[1:]):
            if a.out_width != b.in_width:
                raise ShapeError(
                    f"layer widths do not chain: {a.out_width} -> {b.in_width}"
                )
        self.layers = layers
        if warmup_iters is None:
            # fresh power vectors warm up; restored ones must not move so the
            # applied weights reproduce the checkpointed state exactly
            fresh = any(l.power_u is None and l.spectral_norm for l in layers)
            warmup_iters = WARMUP_POWER_ITERS if fresh else 0
        self.refresh_applied(n_iters=warmup_iters)

    @classmethod
    def build(cls, widths, hidden_activation=RELU, spectral_norm=False, rng=None):
        """He-uniform initialised MLP: widths = [in, h1, ..., out].

        Hidden layers use ``hidden_activation``; the final layer is linear.
        ``spectral_norm`` applies to every layer when True.
        """
        rng = rng if rng is not None else np.random.default_rng(0)
        layers = []
        n = len(widths) - 1
        for i in range(n):
            fan_in, fan_out = widths[i], widths[i + 1]
            last = i == n - 1
            if last:
                bound = np.sqrt(6.0 / (fan_in + fan_out))
            else:
                bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            layers.append(
                Layer(
                    weight=w,
                    bias=np.zeros(fan_out),
                    activation=IDENTITY if last else hidden_activation,
                    spectral_norm=bool(spectral_norm),
                    power_u=None,
                )
            )
        return cls(layers)

    @property
    def in_width(self):
        return self.layers[0].in_width

    @property
    def out_width(self):
        return self.layers[-1].out_width

    def refresh_applied(self, n_iters: int = 1):
        for layer in self.layers:
            spectral_normalize(layer, n_iters=n_iters)

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_width:
            raise ShapeError(
                f"input width {x.shape[-1]} != first-layer width {self.in_width}"
            )
        return x

    def forward(self, x):
        x = self._check_input(x)
        single = x.ndim == 1
        h = np.atleast_2d(x)  # one code path so batch and single agree bitwise
        for layer in self.layers:
            z = h @ layer.applied.T + layer.bias
            h = _activate(z, layer.activation)
        return h[0] if single else h

    def forward_cached(self, x):
        """Forward pass retaining per-layer inputs and preactivations."""
        x = self._check_input(x)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        cache = []
        for layer in self.layers:
            z = h @ layer.applied.T + layer.bias
            cache.append((h, z))
            h = _activate(z, layer.activation)
        if single:
            cache = [(hi[0], zi[0]) for hi, zi in cache]
            return h[0], cache
        return h, cache

    def backward(self, cache, upstream):
        """Gradients of a scalar loss whose output-gradient is ``upstream``.

        Returns (grads, input_grad) where grads is a list of (dW, db) per
        layer. Batched inputs sum gradients over the batch.
        """
        if len(cache) != len(self.layers):
            raise ValueError("cache does not match network: run forward_cached first")
        upstream = np.asarray(upstream, dtype=np.float64)
        delta = upstream
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            h_in, z = cache[i]
            dz = delta * _activate_grad(z, layer.activation)
            if dz.ndim == 1:
                dw = np.outer(dz, h_in)
                db = dz.copy()
            else:
                dw = dz.T @ h_in
                db = dz.sum(axis=0)
            grads[i] = (dw, db)
            delta = dz @ layer.applied
        return grads, delta

    def parameters(self):
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def n_parameters(self):
        return sum(p.size for p in self.parameters())

    def copy(self):
        layers = [
            Layer(
                weight=l.weight.copy(),
                bias=l.bias.copy(),
                activation=l.activation,
                spectral_norm=l.spectral_norm,
                power_u=None if l.power_u is None else l.power_u.copy(),
            )
            for l in self.layers
        ]
        return Mlp(layers)


def clip_grad_norm(grads, max_norm):
    """Scale (dW, db) pairs so the global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = 0.0
    for dw, db in grads:
        total += float(np.sum(dw * dw)) + float(np.sum(db * db))
    norm = np.sqrt(total)
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return [(dw * scale, db * scale) for dw, db in grads], norm


def l2_penalty(net: Mlp, coefficient: float, grads=None):
    """coefficient * sum(w^2) over weights (biases excluded).

    When ``grads`` is given, adds 2*coefficient*w to each weight gradient
    in place. Returns the penalty value.
    """
    if coefficient < 0:
        raise ValueError("coefficient must be >= 0")
    penalty = 0.0
    for i, layer in enumerate(net.layers):
        penalty += coefficient * float(np.sum(layer.weight**2))
        if grads is not None and coefficient != 0.0:
            dw, _ = grads[i]
            dw += 2.0 * coefficient * layer.weight
    return penalty


@dataclass
class LrSchedule:
    """Step decay: base * rate^(episode // every), floored at min_lr."""

    base_lr: float
    decay_rate: float = 1.0
    decay_every_episodes: int = 1
    min_lr: float = 0.0

    def value(self, episode: int) -> float:
        k = max(0, episode) // max(1, self.decay_every_episodes)
        return max(self.min_lr, self.base_lr * self.decay_rate**k)


class Adam:
    """Adam with bias correction, one (m, v) pair per parameter tensor."""

    def __init__(self, net: Mlp, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in net.parameters()]
        self.v = [np.zeros_like(p) for p in net.parameters()]

    def step(self, net: Mlp, grads, lr=None):
        """Apply one update. grads is the (dW, db) list from backward."""
        flat = []
        for dw, db in grads:
            flat.append(dw)
            flat.append(db)
        for g in flat:
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError("non-finite gradient: update diverged")
        lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(net.parameters(), flat, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        net.refresh_applied(n_iters=1)


# ---------------------------------------------------------------------------
# Fast batched evaluation (rollout side)


@dataclass
class PackedParams:
    """Transposed (in, out) weight snapshots for chunked batch forward."""

    weights: list
    biases: list
    activations: list
    dtype: np.dtype


def pack_params(net: Mlp, dtype=np.float32) -> PackedParams:
    dt = np.dtype(dtype)
    return PackedParams(
        weights=[np.ascontiguousarray(l.applied.T, dtype=dt) for l in net.layers],
        biases=[l.bias.astype(dt) for l in net.layers],
        activations=[l.activation for l in net.layers],
        dtype=dt,
    )


def forward_packed(packed: PackedParams, x, out=None, chunk=4096):
    """Chunked forward through packed params; x is (B, in), out is (B, out).

    Chunking keeps intermediates cache-resident, which is what makes the
    planner hot path viable on one core.
    """
    x = np.ascontiguousarray(x, dtype=packed.dtype)
    n_rows = x.shape[0]
    out_w = packed.weights[-1].shape[1]
    if out is None:
        out = np.empty((n_rows, out_w), dtype=packed.dtype)
    rows = min(chunk, n_rows)
    n_layers = len(packed.weights)
    bufs = [np.empty((rows, w.shape[1]), dtype=packed.dtype) for w in packed.weights[:-1]]
    scratch = np.empty((rows, max(w.shape[1] for w in packed.weights)), dtype=packed.dtype)
    for i in range(0, n_rows, chunk):
        n = min(chunk, n_rows - i)
        h = x[i : i + n]
        for li in range(n_layers):
            w = packed.weights[li]
            width = w.shape[1]
            dst = out[i : i + n] if li == n_layers - 1 else bufs[li][:n]
            np.dot(h, w, out=dst)
            dst += packed.biases[li]
            act = packed.activations[li]
            if act == RELU:
                np.maximum(dst, 0.0, out=dst)
            elif act == LEAKY_RELU:
                sc = scratch[:n, :width]
                np.multiply(dst, LEAKY_SLOPE, out=sc)
                np.maximum(dst, sc, out=dst)
            h = dst
    return out


class NetFunction:
    """Callable wrapper around an Mlp for planner-side evaluation.

    Applies an optional output sign, squeezes the trailing unit dim, counts
    invocations (ablation bookkeeping), and caches a parameter snapshot in
    the requested dtype which must be refreshed after parameter updates.
    """

    supports_out = True  # planner may pass a preallocated output buffer

    def __init__(self, net: Mlp, sign=1.0, dtype=np.float32, chunk=4096):
        self.net = net
        self.sign = float(sign)
        self.dtype = np.dtype(dtype)
        self.chunk = chunk
        self.calls = 0
        self._packed = None

    def refresh(self):
        self._packed = pack_params(self.net, self.dtype)

    @property
    def packed(self):
        if self._packed is None:
            self.refresh()
        return self._packed

    def __call__(self, x, out=None):
        self.calls += 1
        y = forward_packed(self.packed, np.atleast_2d(x), out=out, chunk=self.chunk)
        if self.sign != 1.0:
            np.multiply(y, self.dtype.type(self.sign), out=y)
        return y[:, 0] if y.shape[1] == 1 else y


# ---------------------------------------------------------------------------
# Checkpoints


def save_mlp(net: Mlp, path):
    doc = {
        "format": CKPT_FORMAT,
        "version": CKPT_VERSION,
        "layers": [
            {
                "in": l.in_width,
                "out": l.out_width,
                "activation": l.activation,
                "spectral_norm": l.spectral_norm,
                "weight": l.weight.reshape(-1).tolist(),  # row-major (out, in)
                "bias": l.bias.tolist(),
                "power_u": None if l.power_u is None else l.power_u.tolist(),
            }
            for l in net.layers
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_mlp(path) -> Mlp:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != CKPT_FORMAT:
        raise ValueError(f"{path}: not a {CKPT_FORMAT} checkpoint")
    if doc.get("version") != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    layers = []
    for spec in doc["layers"]:
        w = np.array(spec["weight"], dtype=np.float64).reshape(spec["out"], spec["in"])
        u = spec.get("power_u")
        layers.append(
            Layer(
                weight=w,
                bias=np.array(spec["bias"], dtype=np.float64),
                activation=spec["activation"],
                spectral_norm=bool(spec["spectral_norm"]),
                power_u=None if u is None else np.array(u, dtype=np.float64),
            )
        )
    return Mlp(layers)
