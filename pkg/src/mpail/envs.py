"""Seeded simulation environments, scripted demonstrators, and demo I/O.

Navigation: planar vehicle with kinematic-bicycle nominal dynamics plus an
unmodeled lateral slip term, state (x, y, yaw, v), action (target velocity,
steering angle). Cartpole: standard frictionless cart-pole, state
(cart position, cart velocity, pole angle, pole angular velocity), action
(horizontal force). Episodes are fixed-length; there is no early
termination.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

GOAL_XY = (10.0, 10.0)
NAV_ACTION_LOW = np.array([0.0, -0.4])
NAV_ACTION_HIGH = np.array([2.0, 0.4])
CARTPOLE_ACTION_LOW = np.array([-10.0])
CARTPOLE_ACTION_HIGH = np.array([10.0])
UPRIGHT_ANGLE = 0.2  # |pole angle| threshold for the balance task metric


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    out = np.mod(-np.asarray(a) + np.pi, 2.0 * np.pi)
    return -(out - np.pi)


@dataclass(frozen=True)
class EpisodeSpec:
    horizon_steps: int = 100
    dt: float = 0.1
    init_box_side: float = 2.0  # initial positions uniform in a centered box
    heading_range: tuple = (-np.pi, np.pi)

    def __post_init__(self):
        if self.horizon_steps <= 0:
            raise ValueError("horizon_steps must be > 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")


@dataclass(frozen=True)
class NavParams:
    wheelbase: float = 0.3
    speed_gain: float = 5.0  # v follows target velocity with this first-order gain
    slip: bool = False
    slip_gain: float = 0.1
    slip_noise_std: float = 0.01


@dataclass(frozen=True)
class CartpoleParams:
    m_cart: float = 1.0
    m_pole: float = 0.1
    half_length: float = 0.5
    gravity: float = 9.81


def bicycle_step(state, action, dt, wheelbase=0.3, speed_gain=5.0):
    """One Euler step of the kinematic bicycle, vectorized over leading dims.

    xdot = v cos(yaw), ydot = v sin(yaw), yawdot = v tan(steer)/L,
    vdot = k (v_target - v). Shared verbatim by the environment (slip off)
    and the planner's analytic model.
    """
    state = np.asarray(state)
    action = np.asarray(action)
    x, y, yaw, v = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
    v_t, steer = action[..., 0], action[..., 1]
    out = np.empty_like(state)
    out[..., 0] = x + dt * v * np.cos(yaw)
    out[..., 1] = y + dt * v * np.sin(yaw)
    out[..., 2] = yaw + dt * v * np.tan(steer) / wheelbase
    out[..., 3] = v + dt * speed_gain * (v_t - v)
    return out


def nav_reward(state):
    """sqrt(200) - distance to the goal; 0 at the origin, max at the goal."""
    state = np.asarray(state)
    dx = state[..., 0] - GOAL_XY[0]
    dy = state[..., 1] - GOAL_XY[1]
    return np.sqrt(200.0) - np.sqrt(dx * dx + dy * dy)


def cartpole_step(state, action, dt, params: CartpoleParams = CartpoleParams()):
    """Semi-implicit Euler step of the standard frictionless cart-pole.

    Pole angle is measured from upright. The pole is a uniform rod of half
    length l pivoting at the cart, giving the usual 4/3 inertia factor.
    """
    state = np.asarray(state)
    action = np.asarray(action)
    x, xd, th, thd = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
    force = action[..., 0]
    mc, mp, l, g = params.m_cart, params.m_pole, params.half_length, params.gravity
    total = mc + mp
    sin, cos = np.sin(th), np.cos(th)
    tmp = (force + mp * l * thd * thd * sin) / total
    thdd = (g * sin - cos * tmp) / (l * (4.0 / 3.0 - mp * cos * cos / total))
    xdd = tmp - mp * l * thdd * cos / total
    out = np.empty_like(state)
    out[..., 1] = xd + dt * xdd
    out[..., 3] = thd + dt * thdd
    out[..., 0] = x + dt * out[..., 1]
    out[..., 2] = th + dt * out[..., 3]
    return out


def cartpole_energy(state, params: CartpoleParams = CartpoleParams()):
    """Total mechanical energy of the modeled cart-pole (potential zero at
    pivot height); used by integration-drift checks."""
    state = np.asarray(state)
    xd, th, thd = state[..., 1], state[..., 2], state[..., 3]
    mc, mp, l, g = params.m_cart, params.m_pole, params.half_length, params.gravity
    vx_com = xd + l * thd * np.cos(th)
    vy_com = -l * thd * np.sin(th)
    ke = 0.5 * mc * xd**2
    ke = ke + 0.5 * mp * (vx_com**2 + vy_com**2)
    ke = ke + 0.5 * (mp * l * l / 3.0) * thd**2
    pe = mp * g * l * np.cos(th)
    return ke + pe


class NavEnv:
    """Planar navigation toward (10, 10) with optional unmodeled slip.

    The slip term adds a lateral velocity (slip_gain + noise) * v * tan(steer)
    perpendicular to the heading, so it vanishes at zero steering and makes
    the true dynamics differ from the planner's bicycle model otherwise.
    """

    state_dim = 4
    action_dim = 2
    action_low = NAV_ACTION_LOW
    action_high = NAV_ACTION_HIGH

    def __init__(self, params: NavParams = NavParams(), spec: EpisodeSpec = EpisodeSpec()):
        self.params = params
        self.spec = spec
        self._clamp_count = 0

    def reset(self, rng):
        half = self.spec.init_box_side / 2.0
        lo, hi = self.spec.heading_range
        x = rng.uniform(-half, half)
        y = rng.uniform(-half, half)
        yaw = rng.uniform(lo, hi)
        return np.array([x, y, yaw, 0.0])

    def clamp_action(self, action):
        action = np.asarray(action, dtype=np.float64)
        clipped = np.clip(action, self.action_low, self.action_high)
        if not np.array_equal(clipped, action):
            self._clamp_count += 1
            log.debug("nav action clamped (count=%d)", self._clamp_count)
        return clipped

    def step(self, state, action, rng=None):
        """Step one state or an (E, 4) batch; rng may be a Generator or a
        sequence of per-env Generators (slip noise draws one scalar per env)."""
        state = np.asarray(state, dtype=np.float64)
        action = self.clamp_action(action)
        p = self.params
        nxt = bicycle_step(state, action, self.spec.dt, p.wheelbase, p.speed_gain)
        if p.slip:
            if rng is None:
                raise ValueError("slip-enabled env requires an rng")
            if isinstance(rng, np.random.Generator):
                noise = rng.normal(0.0, p.slip_noise_std, size=state.shape[:-1])
            else:
                noise = np.array([g.normal(0.0, p.slip_noise_std) for g in rng])
            v = state[..., 3]
            steer = action[..., 1]
            yaw = state[..., 2]
            v_lat = (p.slip_gain + noise) * v * np.tan(steer)
            nxt[..., 0] = nxt[..., 0] - self.spec.dt * v_lat * np.sin(yaw)
            nxt[..., 1] = nxt[..., 1] + self.spec.dt * v_lat * np.cos(yaw)
        nxt[..., 2] = wrap_angle(nxt[..., 2])
        return nxt

    def task_reward(self, state):
        return nav_reward(state)


class CartpoleEnv:
    """Fixed-length cart-pole balance episodes starting near upright."""

    state_dim = 4
    action_dim = 1
    action_low = CARTPOLE_ACTION_LOW
    action_high = CARTPOLE_ACTION_HIGH

    def __init__(
        self,
        params: CartpoleParams = CartpoleParams(),
        spec: EpisodeSpec = EpisodeSpec(dt=0.02, init_box_side=0.1),
    ):
        self.params = params
        self.spec = spec
        self._clamp_count = 0

    def reset(self, rng):
        # init_box_side doubles as the perturbation scale on all four dims
        half = self.spec.init_box_side / 2.0
        return rng.uniform(-half, half, size=4)

    def clamp_action(self, action):
        action = np.asarray(action, dtype=np.float64)
        clipped = np.clip(action, self.action_low, self.action_high)
        if not np.array_equal(clipped, action):
            self._clamp_count += 1
            log.debug("cartpole action clamped (count=%d)", self._clamp_count)
        return clipped

    def step(self, state, action, rng=None):
        state = np.asarray(state, dtype=np.float64)
        action = self.clamp_action(action)
        nxt = cartpole_step(state, action, self.spec.dt, self.params)
        nxt[..., 2] = wrap_angle(nxt[..., 2])  # keep angle support bounded
        return nxt

    def task_reward(self, state):
        state = np.asarray(state)
        return (np.abs(state[..., 2]) <= UPRIGHT_ANGLE).astype(np.float64)


# ---------------------------------------------------------------------------
# Scripted demonstrators


def nav_expert_action(state, mode="direct", wheelbase=0.3):
    """Pure-pursuit steering toward the goal.

    Target speed is proportional to the remaining distance (capped at the
    action bound) so direct-mode episodes park on the goal within the
    100-step budget. In circling mode the controller holds a constant-turn
    loop once within 1.5 m of the goal.
    """
    state = np.asarray(state, dtype=np.float64)
    x, y, yaw = state[..., 0], state[..., 1], state[..., 2]
    dx = GOAL_XY[0] - x
    dy = GOAL_XY[1] - y
    dist = np.hypot(dx, dy)
    if mode not in ("direct", "circling"):
        raise ValueError(f"unknown expert mode: {mode!r}")
    if mode == "circling" and dist < 1.5:
        steer = np.arctan(wheelbase / 1.0)  # hold a ~1 m radius loop
        return np.array([1.0, steer])
    bearing = np.arctan2(dy, dx)
    alpha = wrap_angle(bearing - yaw)
    if abs(alpha) > np.pi / 2.0:  # goal behind: turn hard toward it
        steer = np.sign(alpha) * NAV_ACTION_HIGH[1]
    else:
        lookahead = np.clip(dist, 0.5, 2.0)
        steer = np.arctan2(2.0 * wheelbase * np.sin(alpha), lookahead)
        steer = np.clip(steer, NAV_ACTION_LOW[1], NAV_ACTION_HIGH[1])
    v_t = np.clip(1.0 * dist, 0.0, NAV_ACTION_HIGH[0])
    return np.array([v_t, steer])


def cartpole_expert_action(state, gains=(0.8, 1.8, 28.0, 5.0)):
    """PD balance controller; gains on (x, xdot, angle, angular rate)."""
    state = np.asarray(state, dtype=np.float64)
    force = float(np.dot(gains, state))
    return np.array([np.clip(force, CARTPOLE_ACTION_LOW[0], CARTPOLE_ACTION_HIGH[0])])


# ---------------------------------------------------------------------------
# Demonstration sets


@dataclass
class DemoSet:
    """State-only episodes; consecutive states within an episode are the
    (s, s') transition atoms. No actions are stored."""

    episodes: list
    state_dim: int
    source: str = ""

    def __post_init__(self):
        for i, ep in enumerate(self.episodes):
            ep = np.asarray(ep, dtype=np.float64)
            if ep.ndim != 2 or ep.shape[1] != self.state_dim:
                raise ValueError(f"episode {i}: expected (T+1, {self.state_dim}) array")
            if not np.all(np.isfinite(ep)):
                raise ValueError(f"episode {i}: non-finite state")
            self.episodes[i] = ep

    @property
    def n_transitions(self):
        return sum(len(ep) - 1 for ep in self.episodes)

    def transition_pairs(self):
        """All (s, s') pairs stacked as a (M, 2*state_dim) array."""
        chunks = [
            np.concatenate([ep[:-1], ep[1:]], axis=1)
            for ep in self.episodes
            if len(ep) >= 2
        ]
        if not chunks:
            return np.empty((0, 2 * self.state_dim))
        return np.concatenate(chunks, axis=0)

    def all_states(self):
        return np.concatenate(self.episodes, axis=0)


def generate_demos(env, expert_fn, n_episodes, seed) -> DemoSet:
    """Run the scripted expert for ``n_episodes`` fixed-length episodes.

    Each episode gets its own child seed; actions are discarded. Episodes
    contain horizon_steps transitions, i.e. horizon_steps + 1 states.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    children = np.random.SeedSequence(seed).spawn(n_episodes)
    episodes = []
    for ss in children:
        rng = np.random.Generator(np.random.SFC64(ss))
        s = env.reset(rng)
        states = [s]
        for _ in range(env.spec.horizon_steps):
            a = expert_fn(s)
            s = env.step(s, a, rng)
            states.append(s)
        episodes.append(np.asarray(states))
    return DemoSet(episodes=episodes, state_dim=env.state_dim, source="scripted")


# ---------------------------------------------------------------------------
# Demo CSV I/O: header `episode,t,s0..s{d-1}`, UTF-8, LF line endings.


def write_demos(demos: DemoSet, path):
    cols = ",".join(f"s{i}" for i in range(demos.state_dim))
    lines = [f"episode,t,{cols}"]
    for e, ep in enumerate(demos.episodes):
        for t, row in enumerate(ep):
            vals = ",".join(f"{v:.17g}" for v in row)
            lines.append(f"{e},{t},{vals}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_demos(path) -> DemoSet:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty demo file")
    header = lines[0].split(",")
    if header[:2] != ["episode", "t"] or len(header) < 3:
        raise ValueError(f"{path}: line 1: bad header {lines[0]!r}")
    dim = len(header) - 2
    for i, name in enumerate(header[2:]):
        if name != f"s{i}":
            raise ValueError(f"{path}: line 1: expected column s{i}, got {name!r}")
    episodes = []
    current = None
    current_idx = -1
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != dim + 2:
            raise ValueError(f"{path}: line {ln}: expected {dim + 2} fields")
        try:
            e = int(parts[0])
            t = int(parts[1])
            vals = np.array([float(v) for v in parts[2:]])
        except ValueError as err:
            raise ValueError(f"{path}: line {ln}: {err}") from None
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"{path}: line {ln}: non-finite state value")
        if e != current_idx:
            if e != current_idx + 1:
                raise ValueError(f"{path}: line {ln}: episode index jump to {e}")
            if current is not None:
                episodes.append(np.asarray(current))
            current = []
            current_idx = e
        if t != len(current):
            raise ValueError(f"{path}: line {ln}: expected t={len(current)}, got {t}")
        current.append(vals)
    if current:
        episodes.append(np.asarray(current))
    if not episodes:
        raise ValueError(f"{path}: no data rows")
    return DemoSet(episodes=episodes, state_dim=dim, source=str(path))
