"""Sampling trajectory optimizer and MPC policy loop.

Each planning call rolls N noisy action sequences of length H through the
learned dynamics, scores them with ensemble-averaged rewards plus an optional
fixed-horizon value tail, re-weights them by exponentiated return, and
returns the blended plan.  The MPC loop executes the first action of the
plan and threads the plan into the next call.

All N rollouts are computed jointly in one deterministic lockstep pass:
rollout n draws its noise from a stream keyed by (seed, step index, n), so
planner output depends only on its inputs and never on execution order or
scheduling.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .envs import EnvSpec
from .nets import EnsembleNet

MODES = ("MBOP", "NOPP", "NOVF", "PDDM")


class PlannerError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    """Free knobs of one planning call (cartpole-flavored defaults)."""

    horizon: int = 64
    n_samples: int = 100
    sigma: float = 0.8
    beta: float = 0.2
    kappa: float = 0.5
    kappa_obj: float = 0.0
    mode: str = "MBOP"
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1 or self.n_samples < 1:
            raise ValueError("horizon and n_samples must be >= 1")
        if self.sigma < 0 or self.kappa < 0 or self.kappa_obj < 0:
            raise ValueError("sigma, kappa and kappa_obj must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")

    # NOPP replaces the cloned prior with a zero-mean Gaussian; NOVF drops
    # the value tail; PDDM is exactly both ablations at once.
    @property
    def use_bc_prior(self) -> bool:
        return self.mode in ("MBOP", "NOVF")

    @property
    def use_value_tail(self) -> bool:
        return self.mode in ("MBOP", "NOPP")


@dataclass
class ObjectiveSpec:
    """Secondary state objective for zero-shot goal or constraint control.

    state-penalty scores -1 for every state whose obs[index] falls on the
    penalized side of the threshold; heading-goal scores the projection of
    the observation's velocity components onto a unit heading vector.
    """

    kind: str = "none"  # none | state-penalty | heading-goal
    index: int = 0
    threshold: float = 0.0
    side: str = "below"  # penalized side: obs[index] < threshold ("below") or >
    heading: tuple = ()
    velocity_indices: tuple = ()

    def __post_init__(self):
        if self.kind not in ("none", "state-penalty", "heading-goal"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kind == "state-penalty" and self.side not in ("below", "above"):
            raise ValueError("side must be 'below' or 'above'")
        if self.kind == "heading-goal":
            h = np.asarray(self.heading, dtype=float)
            if len(h) != len(self.velocity_indices):
                raise ValueError("heading and velocity_indices must align")
            if not np.isclose(np.linalg.norm(h), 1.0):
                raise ValueError("heading must have unit norm")

    def evaluate(self, obs: np.ndarray) -> np.ndarray:
        """Scalar objective per row of a (B, obs_dim) batch."""
        obs = np.atleast_2d(obs)
        if self.kind == "none":
            return np.zeros(len(obs))
        if self.kind == "state-penalty":
            vals = obs[:, self.index]
            bad = vals < self.threshold if self.side == "below" else vals > self.threshold
            return -bad.astype(np.float64)
        h = np.asarray(self.heading, dtype=np.float64)
        return obs[:, list(self.velocity_indices)].astype(np.float64) @ h


@dataclass
class RolloutBatch:
    """N sampled trajectories: actions (N, H, act_dim), primary returns,
    secondary returns, and a validity mask (finite rollouts only)."""

    actions: np.ndarray
    returns: np.ndarray
    secondary: np.ndarray
    valid: np.ndarray


class _Stacked:
    """Member-stacked weights of one ensemble in the planning dtype."""

    def __init__(self, ens: EnsembleNet, dtype):
        self.k = ens.k
        self.w = [
            np.stack([m.weights[j] for m in ens.members]).astype(dtype)
            for j in range(len(ens.members[0].weights))
        ]
        self.b = [
            np.stack([m.biases[j] for m in ens.members]).astype(dtype)[:, None, :]
            for j in range(len(ens.members[0].biases))
        ]
        self.x_mean = ens.norm.x_mean.astype(dtype)
        self.x_std = ens.norm.x_std.astype(dtype)
        self.y_mean = ens.norm.y_mean.astype(dtype)
        self.y_std = ens.norm.y_std.astype(dtype)

    def apply_all(self, x: np.ndarray) -> np.ndarray:
        """Evaluate every member on every row: (B, in) -> (K, B, out)."""
        h = ((x - self.x_mean) / self.x_std)[None]
        last = len(self.w) - 1
        for j in range(last):
            h = np.matmul(h, self.w[j]) + self.b[j]
            np.maximum(h, 0.0, out=h)
        out = np.matmul(h, self.w[last]) + self.b[last]
        return out * self.y_std + self.y_mean

    def apply_member(self, k: int, x: np.ndarray) -> np.ndarray:
        """Evaluate member k on (B, in) rows."""
        h = (x - self.x_mean) / self.x_std
        last = len(self.w) - 1
        for j in range(last):
            h = np.maximum(h @ self.w[j][k] + self.b[j][k, 0], 0.0)
        return (h @ self.w[last][k] + self.b[last][k, 0]) * self.y_std + self.y_mean


@dataclass
class PolicyModels:
    """The trained bundle a policy plans with, pinned to one dtype."""

    dynamics: EnsembleNet
    prior: EnsembleNet | None
    value: EnsembleNet | None
    env_spec: EnvSpec
    dtype: type = np.float64
    _stacks: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        d_in = self.env_spec.obs_dim + self.env_spec.act_dim
        checks = [("dynamics", self.dynamics, d_in, 1 + self.env_spec.obs_dim)]
        if self.prior is not None:
            checks.append(("prior", self.prior, d_in, self.env_spec.act_dim))
        if self.value is not None:
            checks.append(("value", self.value, d_in, 1))
        for name, ens, want_in, want_out in checks:
            m = ens.members[0]
            if (m.in_dim, m.out_dim) != (want_in, want_out):
                raise PlannerError(
                    f"{name} network is {m.in_dim}->{m.out_dim}, expected "
                    f"{want_in}->{want_out} for env {self.env_spec.name!r}"
                )

    def stack(self, role: str) -> _Stacked:
        if role not in self._stacks:
            ens = {"dynamics": self.dynamics, "prior": self.prior, "value": self.value}[role]
            if ens is None:
                raise PlannerError(f"no {role} network available")
            self._stacks[role] = _Stacked(ens, self.dtype)
        return self._stacks[role]

    @property
    def k(self) -> int:
        return self.dynamics.k


def rollout_noise(seed: int, step_index: int, n: int, horizon: int, act_dim: int) -> np.ndarray:
    """Unit-variance noise for rollout n, from a stream keyed by
    (seed, step index, n); independent of execution order."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, step_index, n)))
    return rng.standard_normal((horizon, act_dim))


def rollout_batch(
    obs: np.ndarray,
    prev_plan: np.ndarray,
    models: PolicyModels,
    config: PlannerConfig,
    objective: ObjectiveSpec | None = None,
    step_index: int = 0,
) -> RolloutBatch:
    """Sample all N trajectories in lockstep from the current observation.

    Rollout n uses ensemble head n mod K for its prior and dynamics steps
    (consistent within the trajectory); per-step rewards average all K
    dynamics members; the value tail averages all K value members.
    """
    dtype = models.dtype
    spec = models.env_spec
    n_s, horizon = config.n_samples, config.horizon
    act_dim = spec.act_dim
    if prev_plan.shape != (horizon, act_dim):
        raise PlannerError(
            f"previous plan shape {prev_plan.shape} != {(horizon, act_dim)}"
        )
    prev_plan = prev_plan.astype(dtype, copy=False)
    low = spec.low.astype(dtype)
    high = spec.high.astype(dtype)
    k = models.k
    dyn = models.stack("dynamics")
    prior = models.stack("prior") if config.use_bc_prior else None

    eps = np.stack(
        [rollout_noise(config.seed, step_index, n, horizon, act_dim) for n in range(n_s)]
    )
    eps = (config.sigma * eps).astype(dtype)

    heads = np.arange(n_s) % k
    rows_of = [np.nonzero(heads == i)[0] for i in range(k)]

    states = np.repeat(np.asarray(obs, dtype=dtype)[None, :], n_s, axis=0)
    cand_prev = np.repeat(prev_plan[0][None, :], n_s, axis=0)
    actions = np.zeros((n_s, horizon, act_dim), dtype=dtype)
    returns = np.zeros(n_s)
    secondary = np.zeros(n_s)
    valid = np.ones(n_s, dtype=bool)

    one_minus_beta = 1.0 - config.beta
    for t in range(horizon):
        if objective is not None and objective.kind != "none":
            secondary += objective.evaluate(states)
        if prior is not None:
            cand = np.empty((n_s, act_dim), dtype=dtype)
            for i in range(k):
                rows = rows_of[i]
                cand[rows] = prior.apply_member(i, np.hstack([states[rows], cand_prev[rows]]))
            cand += eps[:, t]
        else:
            cand = eps[:, t].copy()
        mixed = one_minus_beta * cand + config.beta * prev_plan[min(t, horizon - 1)]
        np.clip(mixed, low, high, out=mixed)
        actions[:, t] = mixed

        out = dyn.apply_all(np.hstack([states, mixed]))  # (K, N, 1 + obs_dim)
        returns += out[:, :, 0].mean(axis=0)
        nxt = np.empty_like(states)
        for i in range(k):
            rows = rows_of[i]
            nxt[rows] = states[rows] + out[i, rows, 1:]
        states = nxt
        cand_prev = cand

        bad = ~(
            np.isfinite(states).all(axis=1) & np.isfinite(mixed).all(axis=1)
        )
        if bad.any():
            valid &= ~bad
            states[bad] = 0.0  # freeze diverged rollouts; they are excluded later
            cand_prev[bad] = 0.0

    if config.use_value_tail:
        tail = models.stack("value").apply_all(np.hstack([states, actions[:, -1]]))
        returns += tail[:, :, 0].mean(axis=0)

    valid &= np.isfinite(returns) & np.isfinite(secondary)
    return RolloutBatch(actions, returns, secondary, valid)


def _weights(batch: RolloutBatch, kappa: float, kappa_obj: float):
    """Max-shifted exponential weights over the valid trajectories."""
    if not batch.valid.any():
        raise PlannerError("all sampled trajectories were invalid (non-finite)")
    scores = kappa * batch.returns[batch.valid] + kappa_obj * batch.secondary[batch.valid]
    w = np.exp(scores - scores.max())
    return w, batch.actions[batch.valid]


def reweight(batch: RolloutBatch, kappa: float, kappa_obj: float = 0.0) -> np.ndarray:
    """Exponentiated-return weighted plan, advanced by one step.

    Output slot t averages sampled action column t+1 (the receding-horizon
    shift); the final slot repeats the last sampled column.
    """
    w, acts = _weights(batch, kappa, kappa_obj)
    blended = np.tensordot(w, acts, axes=(0, 0)) / w.sum()  # (H, act_dim)
    plan = np.concatenate([blended[1:], blended[-1:]], axis=0)
    return plan.astype(batch.actions.dtype, copy=False)


def trajopt(
    obs: np.ndarray,
    prev_plan: np.ndarray,
    models: PolicyModels,
    config: PlannerConfig,
    objective: ObjectiveSpec | None = None,
    step_index: int = 0,
) -> np.ndarray:
    """One full planning call: sample N rollouts, reweight, return the plan."""
    batch = rollout_batch(obs, prev_plan, models, config, objective, step_index)
    return reweight(batch, config.kappa, config.kappa_obj)


def trajopt_with_stats(
    obs, prev_plan, models, config, objective=None, step_index: int = 0
):
    """Planning call that also reports rollout diagnostics for tracing."""
    batch = rollout_batch(obs, prev_plan, models, config, objective, step_index)
    plan = reweight(batch, config.kappa, config.kappa_obj)
    w, _ = _weights(batch, config.kappa, config.kappa_obj)
    rets = batch.returns[batch.valid]
    stats = {
        "n_valid": int(batch.valid.sum()),
        "return_best": float(rets.max()),
        "return_mean": float(rets.mean()),
        "return_std": float(rets.std()),
        "ess": float(w.sum() / w.max()),
    }
    return plan, stats


def sample_trajectory(
    n: int,
    obs: np.ndarray,
    prev_plan: np.ndarray,
    models: PolicyModels,
    config: PlannerConfig,
    objective: ObjectiveSpec | None = None,
    step_index: int = 0,
):
    """The n-th sampled trajectory of a planning call.

    Rollouts are computed by the same lockstep pass the full planner uses, so
    this is bit-identical to row n of that pass regardless of how or where
    the other rollouts are evaluated.
    """
    if not 0 <= n < config.n_samples:
        raise PlannerError(f"rollout index {n} out of range [0, {config.n_samples})")
    batch = rollout_batch(obs, prev_plan, models, config, objective, step_index)
    return batch.actions[n], batch.returns[n], batch.secondary[n]


def initial_plan(config: PlannerConfig, act_dim: int, dtype=None) -> np.ndarray:
    """The all-zero plan used at episode start."""
    return np.zeros((config.horizon, act_dim), dtype=dtype or np.float64)


def mpc_policy_step(
    obs: np.ndarray,
    prev_plan: np.ndarray,
    models: PolicyModels,
    config: PlannerConfig,
    objective: ObjectiveSpec | None = None,
    step_index: int = 0,
):
    """Replan from the current observation and return (action, new plan).

    The caller threads the returned plan into the next call and re-zeroes it
    at episode boundaries.
    """
    plan = trajopt(obs, prev_plan, models, config, objective, step_index)
    return plan[0].copy(), plan
