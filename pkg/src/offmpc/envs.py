"""Deterministic, seedable physics environments and scripted behavior policies.

Two desk-scale control systems are used both to generate offline logs and to
evaluate learned controllers: a cart-pole swingup task and a planar point
mass.  Dynamics are integrated with semi-implicit Euler, rewards are shaped
into [0, 1] per step, and every source of randomness flows through an
explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

GRAVITY = 9.81

# cart-pole constants (uniform pole of half-length L pivoted on the cart)
CART_MASS = 1.0
POLE_MASS = 0.1
POLE_HALF_LENGTH = 0.5
CARTPOLE_FORCE = 10.0
CARTPOLE_DT = 0.01
CARTPOLE_STEPS = 1000

# point-mass constants (damped 2-D double integrator)
POINTMASS_DAMPING = 0.05
POINTMASS_FORCE = 1.0
POINTMASS_DT = 0.05
POINTMASS_STEPS = 400


class IntegrationError(RuntimeError):
    """A step was attempted from, or produced, a non-finite state."""


@dataclass
class EnvState:
    """Generalized positions/velocities plus a step counter."""

    q: np.ndarray
    v: np.ndarray
    t: int = 0

    def copy(self) -> "EnvState":
        return EnvState(self.q.copy(), self.v.copy(), self.t)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    act_dim: int
    act_low: tuple
    act_high: tuple
    dt: float
    episode_length: int

    def __post_init__(self):
        low = np.asarray(self.act_low, dtype=float)
        high = np.asarray(self.act_high, dtype=float)
        if not np.all(low < high):
            raise ValueError("act_low must be elementwise below act_high")
        if self.dt <= 0 or self.episode_length <= 0:
            raise ValueError("dt and episode_length must be positive")

    @property
    def low(self) -> np.ndarray:
        return np.asarray(self.act_low, dtype=float)

    @property
    def high(self) -> np.ndarray:
        return np.asarray(self.act_high, dtype=float)


@dataclass(frozen=True)
class BehaviorPolicySpec:
    """Scripted data-collection policy: a controller family, an action-noise
    level and a quality knob in [0, 1] that linearly scales the gains."""

    kind: str = "scripted-swingup"  # scripted-swingup | pd-goal | random
    noise_std: float = 0.0
    quality: float = 1.0

    def __post_init__(self):
        if self.kind not in ("scripted-swingup", "pd-goal", "random"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def _check_finite(state: EnvState) -> None:
    if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.v))):
        raise IntegrationError(f"non-finite state at t={state.t}")


def cartpole_reward(state: EnvState) -> float:
    """Upright, centered cart scores 1; hanging scores 0."""
    x, th = state.q
    return float(0.5 * (1.0 + np.cos(th)) * np.exp(-0.25 * x * x))


def cartpole_step(state: EnvState, action) -> tuple[EnvState, float]:
    """One semi-implicit Euler step of the cart-pole.

    The action is a 1-vector in [-1, 1] (clipped), scaled to a horizontal
    force on the cart.  The returned reward is evaluated on the state the
    step departs from, so a full episode scores its visited states.
    """
    _check_finite(state)
    a = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -1.0, 1.0))
    reward = cartpole_reward(state)

    x, th = state.q
    xd, thd = state.v
    force = CARTPOLE_FORCE * a
    sin, cos = np.sin(th), np.cos(th)
    total = CART_MASS + POLE_MASS
    ml = POLE_MASS * POLE_HALF_LENGTH

    tmp = (force + ml * thd * thd * sin) / total
    th_acc = (GRAVITY * sin - cos * tmp) / (
        POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total)
    )
    x_acc = tmp - ml * th_acc * cos / total

    xd2 = xd + CARTPOLE_DT * x_acc
    thd2 = thd + CARTPOLE_DT * th_acc
    new = EnvState(
        np.array([x + CARTPOLE_DT * xd2, th + CARTPOLE_DT * thd2]),
        np.array([xd2, thd2]),
        state.t + 1,
    )
    _check_finite(new)
    return new, reward


def cartpole_energy(state: EnvState) -> float:
    """Total mechanical energy of the cart-pole (potential zero at the pivot)."""
    _, th = state.q
    xd, thd = state.v
    ml = POLE_MASS * POLE_HALF_LENGTH
    kinetic = (
        0.5 * (CART_MASS + POLE_MASS) * xd * xd
        + ml * xd * thd * np.cos(th)
        + (2.0 / 3.0) * POLE_MASS * POLE_HALF_LENGTH**2 * thd * thd
    )
    potential = ml * GRAVITY * np.cos(th)
    return float(kinetic + potential)


def pointmass_reward(state: EnvState) -> float:
    """Forward (+x) speed clipped to [0, 1]."""
    return float(np.clip(state.v[0], 0.0, 1.0))


def pointmass_step(state: EnvState, action) -> tuple[EnvState, float]:
    """One semi-implicit Euler step of the damped planar point mass."""
    _check_finite(state)
    a = np.clip(np.asarray(action, dtype=float).reshape(-1)[:2], -1.0, 1.0)
    reward = pointmass_reward(state)
    v2 = state.v + POINTMASS_DT * (POINTMASS_FORCE * a - POINTMASS_DAMPING * state.v)
    q2 = state.q + POINTMASS_DT * v2
    new = EnvState(q2, v2, state.t + 1)
    _check_finite(new)
    return new, reward


CARTPOLE_SPEC = EnvSpec(
    name="cartpole-swingup",
    obs_dim=5,
    act_dim=1,
    act_low=(-1.0,),
    act_high=(1.0,),
    dt=CARTPOLE_DT,
    episode_length=CARTPOLE_STEPS,
)

POINTMASS_SPEC = EnvSpec(
    name="pointmass",
    obs_dim=4,
    act_dim=2,
    act_low=(-1.0, -1.0),
    act_high=(1.0, 1.0),
    dt=POINTMASS_DT,
    episode_length=POINTMASS_STEPS,
)


@dataclass
class Env:
    """A pure-function environment: step() does not mutate its argument."""

    spec: EnvSpec
    _step: Callable = field(repr=False)
    _observe: Callable = field(repr=False)
    _reset: Callable = field(repr=False)

    def reset(self, rng: np.random.Generator) -> EnvState:
        return self._reset(rng)

    def step(self, state: EnvState, action) -> tuple[EnvState, float]:
        return self._step(state, action)

    def observe(self, state: EnvState) -> np.ndarray:
        return self._observe(state)


def _cartpole_observe(state: EnvState) -> np.ndarray:
    x, th = state.q
    xd, thd = state.v
    # trig encoding keeps the learned model free of angle-wrap discontinuities
    return np.array([x, np.cos(th), np.sin(th), xd, thd])


def _cartpole_reset(rng: np.random.Generator) -> EnvState:
    q = np.array([rng.uniform(-0.05, 0.05), np.pi + rng.uniform(-0.1, 0.1)])
    v = rng.uniform(-0.01, 0.01, size=2)
    return EnvState(q, v, 0)


def _pointmass_observe(state: EnvState) -> np.ndarray:
    return np.concatenate([state.q, state.v])


def _pointmass_reset(rng: np.random.Generator) -> EnvState:
    q = rng.uniform(-0.25, 0.25, size=2)
    v = rng.uniform(-0.05, 0.05, size=2)
    return EnvState(q, v, 0)


def make_env(name: str) -> Env:
    if name == "cartpole-swingup":
        return Env(CARTPOLE_SPEC, cartpole_step, _cartpole_observe, _cartpole_reset)
    if name == "pointmass":
        return Env(POINTMASS_SPEC, pointmass_step, _pointmass_observe, _pointmass_reset)
    raise ValueError(f"unknown environment {name!r}")


# --- scripted controllers -------------------------------------------------

# operator-grade gains: the pole is held firmly but the cart is centered
# only loosely, so scaled-down gains degrade returns the way a sloppy
# human-tuned controller would
_BAL_KX = 0.25
_BAL_KXD = 0.6
_BAL_KTH = 10.0
_BAL_KTHD = 2.6
_SWING_GAIN = 2.8
_SWING_KX = 0.22
_SWING_KXD = 0.30
_BALANCE_COS = 0.75

_POLE_ENERGY_TOP = POLE_MASS * GRAVITY * POLE_HALF_LENGTH


def _pole_energy(th: float, thd: float) -> float:
    return (
        (2.0 / 3.0) * POLE_MASS * POLE_HALF_LENGTH**2 * thd * thd
        + POLE_MASS * GRAVITY * POLE_HALF_LENGTH * np.cos(th)
    )


def _swingup_action(state: EnvState, quality: float) -> np.ndarray:
    x, th = state.q
    xd, thd = state.v
    sin, cos = np.sin(th), np.cos(th)
    if cos > _BALANCE_COS:
        u = _BAL_KX * x + _BAL_KXD * xd + _BAL_KTH * sin + _BAL_KTHD * thd
    else:
        # pump pole energy toward the upright level while loosely centering
        deficit = _POLE_ENERGY_TOP - _pole_energy(th, thd)
        u = -_SWING_GAIN * deficit * thd * cos - _SWING_KX * x - _SWING_KXD * xd
    return np.array([quality * u])


def _pd_goal_action(state: EnvState, quality: float) -> np.ndarray:
    # cruise at a quality-scaled forward speed while holding the y = 0 line
    vx, vy = state.v
    _, py = state.q
    ux = 1.0 * (2.0 * quality - vx)
    uy = -0.5 * py - 1.0 * vy
    return quality * np.array([ux, uy])


def make_behavior_policy(
    env: Env, policy: BehaviorPolicySpec
) -> Callable[[EnvState, np.random.Generator], np.ndarray]:
    """Bind a policy spec to an environment.

    The returned callable maps (state, rng) to a clipped action; the rng is
    consumed for exploration noise only.
    """
    low, high = env.spec.low, env.spec.high
    act_dim = env.spec.act_dim

    if policy.kind == "random":
        def act(state, rng):
            return rng.uniform(low, high, size=act_dim)
        return act

    if policy.kind == "scripted-swingup":
        if env.spec.name != "cartpole-swingup":
            raise ValueError("scripted-swingup drives the cart-pole only")
        base = _swingup_action
    elif policy.kind == "pd-goal":
        if env.spec.name != "pointmass":
            raise ValueError("pd-goal drives the point mass only")
        base = _pd_goal_action

    def act(state, rng):
        u = base(state, policy.quality)
        if policy.noise_std > 0:
            u = u + rng.normal(0.0, policy.noise_std, size=act_dim)
        return np.clip(u, low, high)

    return act


def run_behavior_policy(env: Env, policy: BehaviorPolicySpec, n_episodes: int, seed: int):
    """Roll the scripted policy for complete episodes; deterministic in seed.

    Episode e draws all of its randomness (reset and action noise) from a
    stream keyed by (seed, e), so collections are reproducible and episodes
    are independent of each other.
    """
    from .dataset import Episode  # local import: dataset depends on EnvSpec

    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    act = make_behavior_policy(env, policy)
    episodes = []
    for ep in range(n_episodes):
        rng = np.random.default_rng(np.random.SeedSequence((seed, ep)))
        state = env.reset(rng)
        obs = [env.observe(state)]
        actions, rewards = [], []
        for _ in range(env.spec.episode_length):
            u = act(state, rng)
            state, r = env.step(state, u)
            actions.append(u)
            rewards.append(r)
            obs.append(env.observe(state))
        episodes.append(
            Episode(
                observations=np.asarray(obs),
                actions=np.asarray(actions),
                rewards=np.asarray(rewards),
                meta={
                    "env": env.spec.name,
                    "policy": {
                        "kind": policy.kind,
                        "noise_std": policy.noise_std,
                        "quality": policy.quality,
                    },
                    "seed": seed,
                    "episode": ep,
                },
            )
        )
    return episodes
