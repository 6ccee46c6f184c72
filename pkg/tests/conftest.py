import json

import pytest

TINY_POINTMASS = {
    "env": "pointmass",
    "collect": {"kind": "pd-goal", "noise_std": 0.4, "quality": 0.6,
                "n_episodes": 4, "seed": 0},
    "train": {"epochs": 2, "batch_size": 128, "k": 2, "hidden": [16, 16],
              "value_horizon": 8},
    "planner": {"horizon": 4, "n_samples": 8, "sigma": 0.4, "beta": 0.2,
                "kappa": 1.0, "seed": 0},
    "seeds": [0, 1],
    "episodes_per_seed": 1,
    "variants": ["BC", "MBOP"],
    "precision": "float64",
}


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """A fully trained tiny pointmass run directory shared across CLI tests."""
    from offmpc import pipeline, runconfig

    out = tmp_path_factory.mktemp("tiny_run")
    cfg = runconfig.resolve({**TINY_POINTMASS, "out_dir": str(out)})
    pipeline.collect_run(cfg)
    pipeline.train_run(cfg, quiet=True)
    return cfg


@pytest.fixture()
def tiny_config_file(tiny_run, tmp_path):
    path = tmp_path / "config.json"
    cfg = dict(tiny_run, models_dir=tiny_run["out_dir"])
    with open(path, "w") as f:
        json.dump(cfg, f)
    return path
