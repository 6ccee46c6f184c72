#!/usr/bin/env python3
"""Zero-shot goal and constraint conditioning with a fixed trained model set.

Two studies:
  constraint: cart-pole with a one-sided cart-position penalty, paired
              against the unconstrained controller on the same seeds.
  goal:       point mass commanded along four headings with the original
              reward ignored (kappa = 0), despite +x-seeking behavior data.
"""
import argparse
import json

import numpy as np

from offmpc import pipeline, runconfig
from offmpc.envs import make_env
from offmpc.evaluate import evaluate_policy


def constraint_study(models_dir, out, seeds, episodes, kappa_obj):
    cfg = runconfig.resolve({
        "env": "cartpole-swingup",
        "out_dir": out,
        "models_dir": models_dir,
        "planner": {"horizon": 32, "kappa": 2.0, "sigma": 0.4},
        "objective": {"kind": "state-penalty", "index": 0, "threshold": 0.0,
                      "side": "below"},
        "seeds": seeds,
        "episodes_per_seed": episodes,
    })
    env = make_env(cfg["env"])
    models = pipeline.load_models(cfg)
    objective = runconfig.objective_spec(cfg)
    base = runconfig.planner_config(cfg)
    free = evaluate_policy(env, models, base, objective, episodes, seeds, "MBOP")
    constrained = evaluate_policy(
        env, models, runconfig.planner_config(cfg, kappa_obj=kappa_obj),
        objective, episodes, seeds, "MBOP",
    )
    report = {
        "unconstrained": {"return": free.mean, "violation_frac": free.violation_frac},
        "constrained": {"return": constrained.mean,
                        "violation_frac": constrained.violation_frac},
        "kappa_obj": kappa_obj,
    }
    print(json.dumps(report, indent=2))
    return report


def goal_study(models_dir, out, seeds, episodes):
    headings = {"+x": (1.0, 0.0), "-x": (-1.0, 0.0), "+y": (0.0, 1.0), "-y": (0.0, -1.0)}
    report = {}
    for name, heading in headings.items():
        cfg = runconfig.resolve({
            "env": "pointmass",
            "out_dir": out,
            "models_dir": models_dir,
            "planner": {"horizon": 16, "kappa": 0.0, "kappa_obj": 3.0, "sigma": 0.8},
            "objective": {"kind": "heading-goal", "heading": list(heading),
                          "velocity_indices": [2, 3]},
            "seeds": seeds,
            "episodes_per_seed": episodes,
        })
        env = make_env(cfg["env"])
        models = pipeline.load_models(cfg)
        res = evaluate_policy(
            env, models, runconfig.planner_config(cfg),
            runconfig.objective_spec(cfg), episodes, seeds, "MBOP",
        )
        report[name] = {"mean_velocity_projection": res.objective_mean}
        print(f"heading {name}: projection {res.objective_mean:+.3f}")
    return report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("study", choices=["constraint", "goal"])
    ap.add_argument("--models", required=True, help="directory with trained checkpoints")
    ap.add_argument("--out", default="runs/zero_shot")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--episodes", type=int, default=2)
    ap.add_argument("--kappa-obj", type=float, default=2.0)
    args = ap.parse_args()
    if args.study == "constraint":
        constraint_study(args.models, args.out, args.seeds, args.episodes, args.kappa_obj)
    else:
        goal_study(args.models, args.out, args.seeds, args.episodes)


if __name__ == "__main__":
    main()
