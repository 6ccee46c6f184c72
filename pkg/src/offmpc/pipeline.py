"""Command bodies behind the CLI: collect, train, eval, sweep, bench.

Each function takes a resolved config dict (see runconfig), writes its
artifacts under cfg["out_dir"], and returns the structured results it wrote,
so tests and scripts can drive the same workflows programmatically.
"""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import nets, runconfig
from .envs import make_env, run_behavior_policy
from .evaluate import bench_policy, evaluate_policy
from .planner import PolicyModels

CHECKPOINTS = {"model": "fm.npz", "bc": "fb.npz", "value": "fr.npz"}

# member seeds are role_seed + i, so roles need disjoint seed blocks
ROLE_SEED_OFFSET = {"model": 0, "bc": 1000, "value": 2000}

RESULT_FIELDS = [
    "dataset_size",
    "variant",
    "horizon",
    "n_samples",
    "sigma",
    "beta",
    "kappa",
    "kappa_obj",
    "filter_top_percent",
    "seeds",
    "episodes_per_seed",
    "mean_return",
    "std_return",
    "constraint_satisfaction",
    "plan_hz",
]


@dataclass
class ResultRow:
    dataset_size: int
    variant: str
    horizon: int | None
    n_samples: int | None
    sigma: float | None
    beta: float | None
    kappa: float | None
    kappa_obj: float | None
    filter_top_percent: float
    seeds: str
    episodes_per_seed: int | None
    mean_return: float
    std_return: float
    constraint_satisfaction: float | None
    plan_hz: float | None

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in RESULT_FIELDS}


def _write_rows_csv(rows: list[dict], path, fields=None) -> None:
    fields = fields or RESULT_FIELDS
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in fields})


def _out_dir(cfg) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_training_dataset(cfg) -> ds.Dataset:
    data = ds.load(cfg["dataset"])
    if cfg["subsample_steps"] is not None:
        data = ds.subsample(data, cfg["subsample_steps"], cfg["subsample_seed"])
    return data


def collect_run(cfg) -> dict:
    out = _out_dir(cfg)
    runconfig.write_resolved(cfg, out)
    env = make_env(cfg["env"])
    episodes = run_behavior_policy(
        env, runconfig.policy_spec(cfg), cfg["collect"]["n_episodes"], cfg["collect"]["seed"]
    )
    data = ds.Dataset(episodes, env.spec)
    ds.save(data, cfg["dataset"])
    ds.export_returns_csv(data, out / "returns.csv")
    returns = data.returns
    summary = {
        "env": cfg["env"],
        "n_episodes": len(data),
        "n_steps": data.n_steps,
        "mean_return": float(returns.mean()),
        "std_return": float(returns.std()),
        "policy": dict(cfg["collect"]),
        "dataset": str(cfg["dataset"]),
    }
    with open(out / "collect_summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    return summary


def build_rows(cfg, data: ds.Dataset, value_horizon: int):
    """Training rows per role with the episode filter applied to the
    behavior-cloning and value roles only; the dynamics model always sees
    unfiltered data."""
    top = cfg["filter_top_percent"]
    filtered = ds.filter_top_episodes(data, top) if top < 100.0 else data
    return {
        "model": ds.make_training_rows(data, "model"),
        "bc": ds.make_training_rows(filtered, "bc"),
        "value": ds.make_training_rows(filtered, "value", value_horizon),
    }


def train_run(cfg, quiet=False) -> dict:
    out = _out_dir(cfg)
    runconfig.write_resolved(cfg, out)
    data = load_training_dataset(cfg)
    train_set, valid_set = ds.split(
        data,
        ds.SplitSpec(cfg["split"]["train_fraction"], cfg["split"]["seed"]),
    )
    value_horizon = cfg["train"]["value_horizon"] or cfg["planner"]["horizon"]
    rows = build_rows(cfg, train_set, value_horizon)
    val_rows = build_rows(cfg, valid_set, value_horizon)
    hidden = tuple(cfg["train"]["hidden"])
    k = cfg["train"]["k"]

    report = {
        "env": cfg["env"],
        "dataset_steps": data.n_steps,
        "dataset_episodes": len(data),
        "value_horizon": value_horizon,
        "filter_top_percent": cfg["filter_top_percent"],
        "roles": {},
    }
    loss_lines = []
    for role in ("model", "bc", "value"):
        tr = rows[role]
        va = val_rows[role]
        ens, train_report = nets.train_ensemble(
            tr.x,
            tr.y,
            role,
            k=k,
            config=runconfig.train_config(cfg, ROLE_SEED_OFFSET[role]),
            x_val=va.x,
            y_val=va.y,
            hidden=hidden,
            info={
                "env": cfg["env"],
                "value_horizon": value_horizon,
                "filter_top_percent": cfg["filter_top_percent"],
            },
        )
        nets.save_ensemble(ens, out / CHECKPOINTS[role])
        for member, (curve, val_curve) in enumerate(
            zip(train_report.train_curves, train_report.val_curves)
        ):
            for epoch, loss in enumerate(curve):
                val = val_curve[epoch] if epoch < len(val_curve) else None
                loss_lines.append(
                    {"role": role, "member": member, "epoch": epoch,
                     "train_loss": loss, "val_loss": val}
                )
        report["roles"][role] = {
            "rows": len(tr.x),
            "val_rows": len(va.x),
            "skipped_episodes": tr.skipped_episodes,
            "final_train_loss": [c[-1] for c in train_report.train_curves],
            "final_val_loss": [c[-1] for c in train_report.val_curves if c],
        }
        if not quiet:
            print(f"trained {role}: rows={len(tr.x)} "
                  f"final train loss={report['roles'][role]['final_train_loss']}")
    _write_rows_csv(
        loss_lines, out / "losses.csv",
        fields=["role", "member", "epoch", "train_loss", "val_loss"],
    )
    with open(out / "train_report.json", "w") as f:
        json.dump(report, f, indent=2)
    return report


def load_models(cfg, models_dir=None) -> PolicyModels:
    where = Path(models_dir or cfg.get("models_dir") or cfg["out_dir"])
    missing = [n for n in CHECKPOINTS.values() if not (where / n).exists()]
    if missing:
        raise FileNotFoundError(f"missing checkpoints in {where}: {missing}")
    return PolicyModels(
        dynamics=nets.load_ensemble(where / CHECKPOINTS["model"]),
        prior=nets.load_ensemble(where / CHECKPOINTS["bc"]),
        value=nets.load_ensemble(where / CHECKPOINTS["value"]),
        env_spec=make_env(cfg["env"]).spec,
        dtype=runconfig.precision_dtype(cfg),
    )


def _result_row(cfg, variant, result, dataset_size, overrides=None) -> ResultRow:
    p = dict(cfg["planner"])
    p.update(overrides or {})
    planning = variant != "BC" and variant != "DATA"
    return ResultRow(
        dataset_size=dataset_size,
        variant=variant,
        horizon=p["horizon"] if planning else None,
        n_samples=p["n_samples"] if planning else None,
        sigma=p["sigma"] if planning else None,
        beta=p["beta"] if planning else None,
        kappa=p["kappa"] if planning else None,
        kappa_obj=p["kappa_obj"] if planning else None,
        filter_top_percent=(overrides or {}).get(
            "filter_top_percent", cfg["filter_top_percent"]
        ),
        seeds=";".join(str(s) for s in cfg["seeds"]),
        episodes_per_seed=cfg["episodes_per_seed"] if variant != "DATA" else None,
        mean_return=result["mean"],
        std_return=result["std"],
        constraint_satisfaction=result.get("constraint_satisfaction"),
        plan_hz=result.get("plan_hz"),
    )


def data_row(cfg, data: ds.Dataset) -> ResultRow:
    returns = data.returns
    return _result_row(
        cfg, "DATA",
        {"mean": float(returns.mean()), "std": float(returns.std())},
        data.n_steps,
    )


def eval_run(cfg, quiet=False) -> dict:
    out = _out_dir(cfg)
    runconfig.write_resolved(cfg, out)
    env = make_env(cfg["env"])
    models = load_models(cfg)
    objective = runconfig.objective_spec(cfg)
    data = load_training_dataset(cfg)
    dataset_size = data.n_steps

    rows = [data_row(cfg, data)]
    details = {}
    results = {}
    for variant in cfg["variants"]:
        trace = out / f"trace_{variant}.jsonl" if cfg["trace"] and variant != "BC" else None
        res = evaluate_policy(
            env, models, runconfig.planner_config(cfg), objective,
            cfg["episodes_per_seed"], cfg["seeds"], variant, trace_path=trace,
        )
        results[variant] = res
        has_obj = objective.kind != "none"
        rows.append(
            _result_row(
                cfg, variant,
                {
                    "mean": res.mean,
                    "std": res.std,
                    "constraint_satisfaction": 1.0 - res.violation_frac if has_obj else None,
                    "plan_hz": res.plan_hz,
                },
                dataset_size,
            )
        )
        details[variant] = {
            "per_seed_means": res.per_seed_means(),
            "episodes": [
                {"seed": r.seed, "episode": r.episode, "return": r.ret,
                 "violation_frac": r.violation_frac,
                 "objective_mean": r.objective_mean,
                 "first_obs": r.first_obs}
                for r in res.records
            ],
        }
        if not quiet:
            print(f"{variant}: mean return {res.mean:.1f} +- {res.std:.1f}")

    # the env seed stream is shared, so paired variants must have started
    # every episode from the same state
    firsts = {
        v: {(r["seed"], r["episode"]): tuple(r["first_obs"]) for r in d["episodes"]}
        for v, d in details.items()
    }
    if len(firsts) > 1:
        ref = next(iter(firsts.values()))
        for v, fo in firsts.items():
            if fo != ref:
                raise RuntimeError(f"paired evaluation broken: {v} saw different initial states")

    payload = {"rows": [r.as_dict() for r in rows]}
    if "MBOP" in results and "BC" in results:
        mbop, bc = results["MBOP"].per_seed_means(), results["BC"].per_seed_means()
        payload["paired_mbop_minus_bc"] = [
            {"seed": s, "mbop": mbop[s], "bc": bc[s], "diff": mbop[s] - bc[s]}
            for s in sorted(mbop)
        ]
    with open(out / "results.json", "w") as f:
        json.dump(payload, f, indent=2)
    _write_rows_csv(payload["rows"], out / "results.csv")
    with open(out / "eval_details.json", "w") as f:
        json.dump(details, f, indent=2)
    return payload


SWEEP_PLANNER_AXES = ("kappa", "horizon", "beta", "sigma")


def sweep_run(cfg, quiet=False) -> dict:
    """Cartesian sweep over planner knobs and/or the episode filter.

    Planner axes reuse the trained checkpoints; a filter_top_percent axis
    retrains the behavior-cloning and value ensembles per setting (the
    dynamics model is always reused as trained on unfiltered rows).
    """
    out = _out_dir(cfg)
    runconfig.write_resolved(cfg, out)
    grid = cfg["sweep"]
    if not grid:
        raise runconfig.ConfigError("sweep grid is empty")
    bad = [k for k in grid if k not in (*SWEEP_PLANNER_AXES, "filter_top_percent")]
    if bad:
        raise runconfig.ConfigError(f"unknown sweep axes {bad}")
    axes = sorted(grid)
    values = [grid[a] for a in axes]
    env = make_env(cfg["env"])
    objective = runconfig.objective_spec(cfg)
    data = load_training_dataset(cfg)
    variant = cfg["planner"]["mode"]

    models_cache: dict = {}

    def models_for(top_percent):
        if top_percent in models_cache:
            return models_cache[top_percent]
        if top_percent == cfg["filter_top_percent"]:
            models = load_models(cfg)
        else:
            sub = dict(cfg, filter_top_percent=top_percent,
                       out_dir=str(out / f"filter_{top_percent:g}"),
                       models_dir=str(out / f"filter_{top_percent:g}"))
            train_run(sub, quiet=True)
            models = load_models(sub)
        models_cache[top_percent] = models
        return models

    rows = []
    for combo in itertools.product(*values):
        named = dict(zip(axes, combo))
        top = named.pop("filter_top_percent", cfg["filter_top_percent"])
        models = models_for(top)
        pcfg = runconfig.planner_config(cfg, **named)
        res = evaluate_policy(
            env, models, pcfg, objective,
            cfg["episodes_per_seed"], cfg["seeds"], variant,
        )
        has_obj = objective.kind != "none"
        row = _result_row(
            cfg, variant,
            {
                "mean": res.mean,
                "std": res.std,
                "constraint_satisfaction": 1.0 - res.violation_frac if has_obj else None,
                "plan_hz": res.plan_hz,
            },
            data.n_steps,
            overrides={**named, "filter_top_percent": top},
        )
        rows.append(row)
        if not quiet:
            print(f"sweep {named} filter_top={top}: mean {res.mean:.1f}")

    payload = {"rows": [r.as_dict() for r in rows]}
    with open(out / "results.json", "w") as f:
        json.dump(payload, f, indent=2)
    _write_rows_csv(payload["rows"], out / "sweep_results.csv")
    return payload


def bench_run(cfg, quiet=False) -> dict:
    out = _out_dir(cfg)
    runconfig.write_resolved(cfg, out)
    env = make_env(cfg["env"])
    models = load_models(cfg)
    n_steps = cfg["bench_steps"]
    rows = []
    res = bench_policy(env, models, runconfig.planner_config(cfg), "BC", n_steps)
    rows.append({"variant": "BC", "horizon": None, "median_hz": res.median_hz,
                 "median_hz_with_env": res.median_hz_with_env, "steps": res.steps})
    if not quiet:
        print(f"BC: {res.median_hz:.1f} Hz")
    for h in cfg["bench_horizons"]:
        pcfg = runconfig.planner_config(cfg, horizon=h, mode="MBOP")
        res = bench_policy(env, models, pcfg, "MBOP", n_steps)
        rows.append({"variant": "MBOP", "horizon": h, "median_hz": res.median_hz,
                     "median_hz_with_env": res.median_hz_with_env, "steps": res.steps})
        if not quiet:
            print(f"MBOP h={h}: {res.median_hz:.1f} Hz")
    payload = {"rows": rows}
    with open(out / "bench.json", "w") as f:
        json.dump(payload, f, indent=2)
    _write_rows_csv(rows, out / "bench.csv",
                    fields=["variant", "horizon", "median_hz", "median_hz_with_env", "steps"])
    return payload
