#!/usr/bin/env python3
"""Desk-scale improvement study on the cart-pole swingup.

Collects a mediocre-operator dataset, trains the three ensembles with the
default hyperparameters, then compares the planning policy against the
cloned prior and the raw data on paired seeds.  Writes results under the
chosen output directory.
"""
import argparse
import json

from offmpc import pipeline, runconfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/improvement")
    ap.add_argument("--episodes", type=int, default=25, help="episodes to collect")
    ap.add_argument("--quality", type=float, default=0.6)
    ap.add_argument("--noise", type=float, default=0.3)
    ap.add_argument("--horizon", type=int, default=32)
    ap.add_argument("--value-horizon", type=int, default=200)
    ap.add_argument("--eval-seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--episodes-per-seed", type=int, default=20)
    args = ap.parse_args()

    cfg = runconfig.resolve({
        "env": "cartpole-swingup",
        "out_dir": args.out,
        "collect": {"kind": "scripted-swingup", "noise_std": args.noise,
                    "quality": args.quality, "n_episodes": args.episodes, "seed": 0},
        "planner": {"horizon": args.horizon},
        "train": {"value_horizon": args.value_horizon},
        "seeds": args.eval_seeds,
        "episodes_per_seed": args.episodes_per_seed,
        "variants": ["BC", "MBOP"],
    })
    summary = pipeline.collect_run(cfg)
    print(f"DATA: {summary['mean_return']:.1f} +- {summary['std_return']:.1f}")
    pipeline.train_run(cfg)
    payload = pipeline.eval_run(cfg)
    print(json.dumps(payload.get("paired_mbop_minus_bc", []), indent=2))


if __name__ == "__main__":
    main()
