"""Python front end for the pgpref C++ core.

Configs are passed as INI text (empty string for the defaults) plus a list of
``section.key=value`` overrides, exactly as on the command line.
"""

import json

from . import _core
from ._core import (
    BudgetError,
    ConfigError,
    Error,
    NumericError,
    config_keys,
    default_config,
    enumerate_trajectories,
    exact_gradient,
    expected_gold,
    normalize_config,
    report,
    trajectory_count,
)

__all__ = [
    "BudgetError",
    "ConfigError",
    "Error",
    "NumericError",
    "config_keys",
    "default_config",
    "diagnose",
    "enumerate_trajectories",
    "exact_gradient",
    "expected_gold",
    "normalize_config",
    "report",
    "train",
    "trajectory_count",
]


def train(config="", overrides=(), out_dir=""):
    """Run one training and return its metrics records as dicts."""
    text = _core.train(config, list(overrides), str(out_dir))
    return [json.loads(line) for line in text.splitlines()]


def diagnose(config="", overrides=(), estimators=("oracle", "reinforce", "rloo2", "rloo4"), reps=10000, seed=1):
    """Bias and variance of named gradient estimators against the exact gradient."""
    return _core.diagnose(config, list(overrides), list(estimators), reps, seed)
