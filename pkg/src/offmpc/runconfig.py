"""Run configuration: one JSON document with full defaulting.

Every command resolves its config against these defaults, rejects unknown
keys (typo safety), and writes the fully resolved document next to its
outputs so results stay reproducible from the run directory alone.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from .envs import BehaviorPolicySpec
from .nets import TrainConfig
from .planner import ObjectiveSpec, PlannerConfig

DEFAULTS = {
    "env": "cartpole-swingup",
    "out_dir": "runs/default",
    "models_dir": None,  # where eval/sweep/bench find checkpoints; defaults to out_dir
    "dataset": None,  # defaults to <out_dir>/dataset.jsonl
    "seeds": [0, 1, 2, 3, 4],
    "episodes_per_seed": 20,
    "collect": {
        "kind": "scripted-swingup",
        "noise_std": 0.3,
        "quality": 0.6,
        "n_episodes": 25,
        "seed": 0,
    },
    "subsample_steps": None,
    "subsample_seed": 0,
    "filter_top_percent": 100.0,
    "split": {"train_fraction": 0.9, "seed": 0},
    "train": {
        "learning_rate": 1e-3,
        "batch_size": 512,
        "epochs": 40,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "seed": 0,
        "k": 3,
        "hidden": [500, 500],
        "value_horizon": None,  # defaults to planner.horizon
    },
    "planner": {
        "horizon": 64,
        "n_samples": 100,
        "sigma": 0.8,
        "beta": 0.2,
        "kappa": 0.5,
        "kappa_obj": 0.0,
        "mode": "MBOP",
        "seed": 0,
    },
    "objective": {
        "kind": "none",
        "index": 0,
        "threshold": 0.0,
        "side": "below",
        "heading": [],
        "velocity_indices": [],
    },
    "variants": ["MBOP", "BC"],
    "precision": "float32",
    "trace": False,
    "sweep": {},  # e.g. {"kappa": [0.1, 0.5], "horizon": [8, 32]}
    "bench_horizons": [4, 8, 16],
    "bench_steps": 1000,
}


class ConfigError(ValueError):
    pass


def _merge(defaults, override, path=""):
    out = copy.deepcopy(defaults)
    for key, val in override.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict) and isinstance(val, dict):
            out[key] = _merge(defaults[key], val, path + key + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve(user: dict | None) -> dict:
    cfg = _merge(DEFAULTS, user or {})
    if cfg["dataset"] is None:
        cfg["dataset"] = str(Path(cfg["out_dir"]) / "dataset.jsonl")
    if not cfg["seeds"]:
        raise ConfigError("seeds must be non-empty")
    return cfg


def load_config(path) -> dict:
    with open(path) as f:
        return resolve(json.load(f))


def write_resolved(cfg: dict, out_dir, name="config.resolved.json") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / name, "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")


def policy_spec(cfg: dict) -> BehaviorPolicySpec:
    c = cfg["collect"]
    return BehaviorPolicySpec(kind=c["kind"], noise_std=c["noise_std"], quality=c["quality"])


def train_config(cfg: dict, seed_offset: int = 0) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        learning_rate=t["learning_rate"],
        batch_size=t["batch_size"],
        epochs=t["epochs"],
        beta1=t["beta1"],
        beta2=t["beta2"],
        eps=t["eps"],
        seed=t["seed"] + seed_offset,
    )


def planner_config(cfg: dict, **overrides) -> PlannerConfig:
    p = dict(cfg["planner"])
    p.update(overrides)
    return PlannerConfig(
        horizon=p["horizon"],
        n_samples=p["n_samples"],
        sigma=p["sigma"],
        beta=p["beta"],
        kappa=p["kappa"],
        kappa_obj=p["kappa_obj"],
        mode=p["mode"],
        seed=p["seed"],
    )


def objective_spec(cfg: dict) -> ObjectiveSpec:
    o = cfg["objective"]
    return ObjectiveSpec(
        kind=o["kind"],
        index=o["index"],
        threshold=o["threshold"],
        side=o["side"],
        heading=tuple(o["heading"]),
        velocity_indices=tuple(o["velocity_indices"]),
    )


def precision_dtype(cfg: dict):
    name = cfg["precision"]
    if name not in ("float32", "float64"):
        raise ConfigError("precision must be 'float32' or 'float64'")
    return np.float32 if name == "float32" else np.float64
