"""Command-line front door: collect, train, eval, sweep, bench.

Every verb takes --config PATH (JSON, fully defaulted) plus targeted
overrides.  Success exits 0; failures print one machine-readable JSON error
object to stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import pipeline, runconfig


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a JSON run config")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--seed", type=int, help="override the command's primary seed")
    p.add_argument("--dataset", help="override the dataset path")
    p.add_argument("--dataset-size", type=int, dest="dataset_size",
                   help="subsample the dataset to this many steps")
    p.add_argument("--filter-top", type=float, dest="filter_top",
                   help="keep only the top percent of episodes for bc/value training")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="offmpc",
        description="offline model-based control: data collection, training, "
                    "evaluation, sweeps and timing",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, description in [
        ("collect", "run the scripted behavior policy and write a dataset"),
        ("train", "train dynamics/prior/value ensembles from a dataset"),
        ("eval", "evaluate policy variants against the environment"),
        ("sweep", "grid-sweep planner knobs or the episode filter"),
        ("bench", "measure control frequency for BC and planning"),
    ]:
        p = sub.add_parser(name, help=description)
        _add_common(p)
        if name == "eval":
            p.add_argument("--variant", action="append",
                           help="policy variant(s) to evaluate (repeatable)")
        if name == "sweep":
            p.add_argument("--grid", help="JSON grid, e.g. '{\"kappa\": [0.1, 0.5]}'")
    return parser


def resolve_args(args) -> dict:
    if args.config:
        with open(args.config) as f:
            user = json.load(f)
    else:
        user = {}
    cfg = runconfig.resolve(user)
    if args.out:
        cfg["out_dir"] = args.out
        if not user.get("dataset") and not args.dataset:
            cfg["dataset"] = str(args.out) + "/dataset.jsonl"
    if args.dataset:
        cfg["dataset"] = args.dataset
    if args.dataset_size is not None:
        cfg["subsample_steps"] = args.dataset_size
    if args.filter_top is not None:
        cfg["filter_top_percent"] = args.filter_top
    if args.seed is not None:
        if args.command == "collect":
            cfg["collect"]["seed"] = args.seed
        elif args.command == "train":
            cfg["train"]["seed"] = args.seed
        else:
            cfg["seeds"] = [args.seed]
    if getattr(args, "variant", None):
        cfg["variants"] = args.variant
    if getattr(args, "grid", None):
        cfg["sweep"] = json.loads(args.grid)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_args(args)
        command = {
            "collect": pipeline.collect_run,
            "train": pipeline.train_run,
            "eval": pipeline.eval_run,
            "sweep": pipeline.sweep_run,
            "bench": pipeline.bench_run,
        }[args.command]
        command(cfg)
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports all failures
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
