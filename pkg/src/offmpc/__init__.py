"""Offline model-based control toolkit.

Learn an ensemble dynamics model, a behavior-cloning action prior and a
fixed-horizon value function from logged episodes, then control the system
with a sampling MPC trajectory optimizer, including zero-shot goal and
constraint conditioning.
"""
from .dataset import Dataset, Episode, SplitSpec
from .envs import BehaviorPolicySpec, EnvSpec, EnvState, make_env, run_behavior_policy
from .evaluate import evaluate_policy
from .nets import EnsembleNet, TrainConfig, train_ensemble
from .planner import (
    ObjectiveSpec,
    PlannerConfig,
    PolicyModels,
    mpc_policy_step,
    reweight,
    sample_trajectory,
    trajopt,
)

__all__ = [
    "BehaviorPolicySpec",
    "Dataset",
    "EnsembleNet",
    "Episode",
    "EnvSpec",
    "EnvState",
    "ObjectiveSpec",
    "PlannerConfig",
    "PolicyModels",
    "SplitSpec",
    "TrainConfig",
    "evaluate_policy",
    "make_env",
    "mpc_policy_step",
    "reweight",
    "run_behavior_policy",
    "sample_trajectory",
    "train_ensemble",
    "trajopt",
]

__version__ = "0.1.0"
