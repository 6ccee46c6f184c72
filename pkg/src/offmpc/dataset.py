"""Persistence, sub-sampling, filtering and splitting of offline episode logs.

Datasets are immutable-by-convention collections of complete episodes.  The
on-disk format is line-delimited JSON: one header record (schema version,
environment spec, episode count) followed by one record per episode, floats
serialized at full precision so a round trip is bit-exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .envs import EnvSpec

SCHEMA_VERSION = 1


class DatasetError(Exception):
    """Base class for dataset load/validation failures."""


class SchemaVersionError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    def __init__(self, message: str, episode_index: int | None = None):
        super().__init__(message)
        self.episode_index = episode_index


class DimensionMismatchError(DatasetError):
    pass


@dataclass
class Episode:
    """One complete (s, a, r) log: T+1 observation rows, T actions, T rewards."""

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    meta: dict = field(default_factory=dict)
    ret: float = None  # sum of rewards; recomputed unless supplied by a loader

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if self.observations.ndim != 2 or self.actions.ndim != 2:
            raise DimensionMismatchError("observations and actions must be 2-D")
        n = len(self.actions)
        if len(self.observations) != n + 1 or len(self.rewards) != n:
            raise DimensionMismatchError(
                f"inconsistent row counts: {len(self.observations)} obs, "
                f"{n} actions, {len(self.rewards)} rewards"
            )
        total = float(np.sum(self.rewards))
        if self.ret is None:
            self.ret = total
        elif self.ret != total:
            raise DatasetError(f"stored return {self.ret} != sum of rewards {total}")

    def __len__(self) -> int:
        return len(self.actions)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Episode)
            and np.array_equal(self.observations, other.observations)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
            and self.ret == other.ret
            and self.meta == other.meta
        )


@dataclass
class Dataset:
    episodes: list[Episode]
    env_spec: EnvSpec

    def __post_init__(self):
        for i, ep in enumerate(self.episodes):
            if ep.observations.shape[1] != self.env_spec.obs_dim:
                raise DimensionMismatchError(
                    f"episode {i}: obs_dim {ep.observations.shape[1]} != "
                    f"{self.env_spec.obs_dim}"
                )
            if ep.actions.shape[1] != self.env_spec.act_dim:
                raise DimensionMismatchError(
                    f"episode {i}: act_dim {ep.actions.shape[1]} != "
                    f"{self.env_spec.act_dim}"
                )

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def n_steps(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    @property
    def returns(self) -> np.ndarray:
        return np.array([ep.ret for ep in self.episodes])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dataset)
            and self.env_spec == other.env_spec
            and self.episodes == other.episodes
        )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")


def save(dataset: Dataset, path) -> None:
    header = {
        "schema_version": SCHEMA_VERSION,
        "env_spec": {
            "name": dataset.env_spec.name,
            "obs_dim": dataset.env_spec.obs_dim,
            "act_dim": dataset.env_spec.act_dim,
            "act_low": list(dataset.env_spec.act_low),
            "act_high": list(dataset.env_spec.act_high),
            "dt": dataset.env_spec.dt,
            "episode_length": dataset.env_spec.episode_length,
        },
        "n_episodes": len(dataset.episodes),
        "n_steps": dataset.n_steps,
    }
    with open(path, "w") as f:
        f.write(json.dumps(header) + "\n")
        for ep in dataset.episodes:
            record = {
                "observations": ep.observations.tolist(),
                "actions": ep.actions.tolist(),
                "rewards": ep.rewards.tolist(),
                "return": ep.ret,
                "meta": ep.meta,
            }
            f.write(json.dumps(record) + "\n")


def load(path) -> Dataset:
    with open(path) as f:
        lines = f.readlines()
    if not lines:
        raise TruncatedFileError("empty file: no header record")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise TruncatedFileError(f"unreadable header record: {e}") from e
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"schema version {version} unsupported (expected {SCHEMA_VERSION})"
        )
    spec_d = header["env_spec"]
    env_spec = EnvSpec(
        name=spec_d["name"],
        obs_dim=spec_d["obs_dim"],
        act_dim=spec_d["act_dim"],
        act_low=tuple(spec_d["act_low"]),
        act_high=tuple(spec_d["act_high"]),
        dt=spec_d["dt"],
        episode_length=spec_d["episode_length"],
    )
    n_episodes = header["n_episodes"]
    body = lines[1:]
    if len(body) < n_episodes:
        raise TruncatedFileError(
            f"expected {n_episodes} episode records, found {len(body)}",
            episode_index=len(body),
        )
    episodes = []
    for i in range(n_episodes):
        try:
            rec = json.loads(body[i])
        except json.JSONDecodeError as e:
            raise TruncatedFileError(
                f"corrupt episode record {i}: {e}", episode_index=i
            ) from e
        ep = Episode(
            observations=np.array(rec["observations"], dtype=np.float64),
            actions=np.array(rec["actions"], dtype=np.float64),
            rewards=np.array(rec["rewards"], dtype=np.float64),
            meta=rec["meta"],
            ret=rec["return"],
        )
        episodes.append(ep)
    return Dataset(episodes, env_spec)


def export_returns_csv(dataset: Dataset, path) -> None:
    """Per-episode returns in long CSV form, for plotting."""
    with open(path, "w") as f:
        f.write("episode,length,return\n")
        for i, ep in enumerate(dataset.episodes):
            f.write(f"{i},{len(ep)},{ep.ret!r}\n")


def subsample(dataset: Dataset, n_steps: int, seed: int) -> Dataset:
    """Draw whole episodes uniformly without replacement until the cumulative
    step count first reaches n_steps; selection order is preserved."""
    if n_steps > dataset.n_steps:
        raise ValueError(
            f"n_steps={n_steps} exceeds dataset size {dataset.n_steps}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset.episodes))
    picked, total = [], 0
    for idx in order:
        if total >= n_steps:
            break
        picked.append(dataset.episodes[idx])
        total += len(dataset.episodes[idx])
    return Dataset(picked, dataset.env_spec)


def filter_top_episodes(dataset: Dataset, top_percent: float) -> Dataset:
    """Keep the ceil(p*E/100) highest-return episodes (ties: earlier episode
    wins); kept episodes stay in their original order."""
    if not 0.0 < top_percent <= 100.0:
        raise ValueError("top_percent must be in (0, 100]")
    if not dataset.episodes:
        raise DatasetError("cannot filter an empty dataset")
    n_keep = math.ceil(top_percent * len(dataset.episodes) / 100.0)
    ranked = sorted(
        range(len(dataset.episodes)),
        key=lambda i: (-dataset.episodes[i].ret, i),
    )
    keep = sorted(ranked[:n_keep])
    return Dataset([dataset.episodes[i] for i in keep], dataset.env_spec)


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Episode-level shuffle then partition; both sides non-empty."""
    n = len(dataset.episodes)
    if n < 2:
        raise ValueError("need at least 2 episodes to split")
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(n)
    n_train = min(max(int(spec.train_fraction * n), 1), n - 1)
    train = [dataset.episodes[i] for i in order[:n_train]]
    valid = [dataset.episodes[i] for i in order[n_train:]]
    return Dataset(train, dataset.env_spec), Dataset(valid, dataset.env_spec)


@dataclass
class TrainingRows:
    x: np.ndarray
    y: np.ndarray
    skipped_episodes: int = 0  # too short for a full value window


def make_training_rows(dataset: Dataset, target: str, value_horizon: int = 1) -> TrainingRows:
    """Flatten episodes into supervised rows for one learner role.

    model: (s_t, a_t) -> (r_t, s_{t+1} - s_t), delta-state targets.
    bc:    (s_t, a_{t-1}) -> a_t, with a_{-1} = 0 at the episode start.
    value: (s_t, a_{t-1}) -> sum of the next value_horizon rewards, emitted
           for full windows only; episodes shorter than the window are
           skipped and counted.
    """
    if target not in ("model", "bc", "value"):
        raise ValueError(f"unknown training target {target!r}")
    if target == "value" and value_horizon < 1:
        raise ValueError("value_horizon must be >= 1")
    xs, ys = [], []
    skipped = 0
    for ep in dataset.episodes:
        s = ep.observations
        a = ep.actions
        r = ep.rewards
        n = len(ep)
        a_prev = np.vstack([np.zeros((1, a.shape[1])), a[:-1]])
        if target == "model":
            xs.append(np.hstack([s[:-1], a]))
            ys.append(np.hstack([r[:, None], s[1:] - s[:-1]]))
        elif target == "bc":
            xs.append(np.hstack([s[:-1], a_prev]))
            ys.append(a)
        else:
            if n < value_horizon:
                skipped += 1
                continue
            # per-window sums (not cumsum differences): matches a direct
            # window-by-window summation bit for bit
            windows = np.lib.stride_tricks.sliding_window_view(r, value_horizon)
            targets = windows.sum(axis=1)
            upto = n - value_horizon + 1
            xs.append(np.hstack([s[:upto], a_prev[:upto]]))
            ys.append(targets[:, None])
    if not xs:
        obs_dim = dataset.env_spec.obs_dim
        act_dim = dataset.env_spec.act_dim
        width = obs_dim + act_dim
        out = {"model": 1 + obs_dim, "bc": act_dim, "value": 1}[target]
        return TrainingRows(np.zeros((0, width)), np.zeros((0, out)), skipped)
    return TrainingRows(np.vstack(xs), np.vstack(ys), skipped)
