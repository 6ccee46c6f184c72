"""Closed-loop evaluation of learned policies on the simulated systems.

Episodes are paired across policy variants: episode e of seed s always
resets from the stream keyed by (s, e), so two variants evaluated with the
same seed list see identical initial states.  Planner randomness is keyed by
(planner seed, env seed, episode), keeping every run reproducible from its
config alone.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace

import numpy as np

from .envs import Env
from .planner import (
    ObjectiveSpec,
    PlannerConfig,
    PolicyModels,
    initial_plan,
    mpc_policy_step,
    trajopt_with_stats,
)

PLANNING_VARIANTS = ("MBOP", "NOPP", "NOVF", "PDDM")


@dataclass
class EpisodeRecord:
    seed: int
    episode: int
    ret: float
    steps: int
    violation_frac: float
    objective_mean: float
    plan_time: float
    env_time: float
    first_obs: list


@dataclass
class EvalResult:
    variant: str
    records: list

    @property
    def returns(self) -> np.ndarray:
        return np.array([r.ret for r in self.records])

    @property
    def mean(self) -> float:
        return float(self.returns.mean())

    @property
    def std(self) -> float:
        return float(self.returns.std())

    def per_seed_means(self) -> dict:
        seeds = sorted({r.seed for r in self.records})
        return {
            s: float(np.mean([r.ret for r in self.records if r.seed == s]))
            for s in seeds
        }

    @property
    def violation_frac(self) -> float:
        return float(np.mean([r.violation_frac for r in self.records]))

    @property
    def objective_mean(self) -> float:
        return float(np.mean([r.objective_mean for r in self.records]))

    # steps per second spent planning only, and wall-clock including the
    # simulator, both reported because only the former is hardware-comparable
    @property
    def plan_hz(self) -> float:
        steps = sum(r.steps for r in self.records)
        return steps / sum(r.plan_time for r in self.records)

    @property
    def total_hz(self) -> float:
        steps = sum(r.steps for r in self.records)
        return steps / sum(r.plan_time + r.env_time for r in self.records)


def bc_action(models: PolicyModels, obs: np.ndarray, a_prev: np.ndarray) -> np.ndarray:
    """Ensemble-mean behavior-cloned action, clipped to the action bounds."""
    stack = models.stack("prior")
    x = np.concatenate([obs, a_prev]).astype(models.dtype)[None, :]
    a = stack.apply_all(x).mean(axis=0)[0]
    return np.clip(a, models.env_spec.low, models.env_spec.high)


def _episode_planner_seed(config: PlannerConfig, seed: int, episode: int) -> int:
    return int(np.random.SeedSequence((config.seed, seed, episode)).generate_state(1)[0])


def evaluate_policy(
    env: Env,
    models: PolicyModels,
    config: PlannerConfig,
    objective: ObjectiveSpec | None,
    n_episodes: int,
    seeds,
    variant: str = "MBOP",
    trace_path=None,
) -> EvalResult:
    """Run n_episodes per seed and collect returns, objective statistics and
    planning frequency."""
    seeds = list(seeds)
    if n_episodes < 1 or not seeds:
        raise ValueError("need at least one episode and one seed")
    if variant != "BC" and variant not in PLANNING_VARIANTS:
        raise ValueError(f"unknown policy variant {variant!r}")
    trace = open(trace_path, "w") if trace_path else None
    records = []
    try:
        for seed in seeds:
            for ep in range(n_episodes):
                records.append(
                    _run_episode(env, models, config, objective, seed, ep, variant, trace)
                )
    finally:
        if trace:
            trace.close()
    return EvalResult(variant, records)


def _run_episode(env, models, config, objective, seed, ep, variant, trace):
    rng = np.random.default_rng(np.random.SeedSequence((seed, ep)))
    state = env.reset(rng)
    act_dim = env.spec.act_dim
    planning = variant != "BC"
    if planning:
        cfg = replace(config, mode=variant, seed=_episode_planner_seed(config, seed, ep))
        plan = initial_plan(cfg, act_dim, models.dtype)
    a_prev = np.zeros(act_dim, dtype=models.dtype)

    total = 0.0
    viol = 0
    obj_sum = 0.0
    plan_time = 0.0
    env_time = 0.0
    first_obs = env.observe(state).tolist()
    n_steps = env.spec.episode_length
    for t in range(n_steps):
        obs = env.observe(state)
        if objective is not None and objective.kind != "none":
            val = float(objective.evaluate(obs)[0])
            obj_sum += val
            viol += val < 0
        t0 = time.perf_counter()
        if planning:
            if trace is not None:
                plan, stats = trajopt_with_stats(obs, plan, models, cfg, objective, t)
                action = plan[0].copy()
            else:
                action, plan = mpc_policy_step(obs, plan, models, cfg, objective, t)
        else:
            action = bc_action(models, obs, a_prev)
            a_prev = action.astype(models.dtype)
        t1 = time.perf_counter()
        state, r = env.step(state, action)
        env_time += time.perf_counter() - t1
        plan_time += t1 - t0
        total += r
        if planning and trace is not None:
            trace.write(json.dumps({"seed": seed, "episode": ep, "step": t,
                                    "action": np.asarray(action).tolist(), **stats}) + "\n")
    return EpisodeRecord(
        seed=seed,
        episode=ep,
        ret=total,
        steps=n_steps,
        violation_frac=viol / n_steps,
        objective_mean=obj_sum / n_steps,
        plan_time=plan_time,
        env_time=env_time,
        first_obs=first_obs,
    )


@dataclass
class BenchRow:
    variant: str
    horizon: int | None
    median_hz: float
    median_hz_with_env: float
    steps: int


def bench_policy(
    env: Env,
    models: PolicyModels,
    config: PlannerConfig,
    variant: str,
    n_steps: int = 1000,
    warmup: int = 20,
    seed: int = 0,
) -> BenchRow:
    """Median per-step control frequency over n_steps measured steps,
    excluding warmup; episodes are re-seeded as needed to fill the budget."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    per_step, per_step_env = [], []
    ep = 0
    planning = variant != "BC"
    measured = -warmup
    while measured < n_steps:
        rng = np.random.default_rng(np.random.SeedSequence((seed, ep)))
        state = env.reset(rng)
        if planning:
            cfg = replace(config, mode=variant, seed=_episode_planner_seed(config, seed, ep))
            plan = initial_plan(cfg, env.spec.act_dim, models.dtype)
        a_prev = np.zeros(env.spec.act_dim, dtype=models.dtype)
        for t in range(env.spec.episode_length):
            if measured >= n_steps:
                break
            t0 = time.perf_counter()
            obs = env.observe(state)
            if planning:
                action, plan = mpc_policy_step(obs, plan, models, cfg, None, t)
            else:
                action = bc_action(models, obs, a_prev)
                a_prev = action
            t1 = time.perf_counter()
            state, _ = env.step(state, action)
            t2 = time.perf_counter()
            if measured >= 0:
                per_step.append(t1 - t0)
                per_step_env.append(t2 - t0)
            measured += 1
        ep += 1
    return BenchRow(
        variant=variant,
        horizon=config.horizon if planning else None,
        median_hz=1.0 / float(np.median(per_step)),
        median_hz_with_env=1.0 / float(np.median(per_step_env)),
        steps=len(per_step),
    )
