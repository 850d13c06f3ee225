"""Predictive policy training on a simulated planar arm."""

import json

from . import _dppt
from ._dppt import (
    discretize_reward,
    feature_points,
    forward_kinematics,
    generate_corpus,
    kl_divergence,
    reach_reward,
    spatial_softmax,
    throw_reward,
    train_behavior,
)

__all__ = [
    "discretize_reward",
    "evaluate_policy",
    "feature_points",
    "forward_kinematics",
    "generate_corpus",
    "kl_divergence",
    "reach_reward",
    "rollout",
    "run_experiment",
    "spatial_softmax",
    "throw_reward",
    "train_behavior",
]


def rollout(task, velocities):
    """Runs a [T][J] velocity sequence from the task's start pose; returns the trace dict."""
    return json.loads(_dppt.rollout(task, [list(map(float, row)) for row in velocities]))


def run_experiment(config):
    """Runs the policy search loop for a config dict; returns curve, episode counts and policy parameters."""
    return json.loads(_dppt.run_experiment(json.dumps(config, default=str)))


def evaluate_policy(config, policy_path):
    return json.loads(_dppt.evaluate_policy(json.dumps(config, default=str), str(policy_path)))
