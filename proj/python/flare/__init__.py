"""Python surface for the latent-rollout forecasting core.

Everything heavy lives in the compiled ``_flare`` extension; this package
re-exports it and adds a couple of convenience helpers.
"""

import json

from _flare import (
    default_cohort_spec_json,
    default_config_json,
    gradcheck_case,
    run_cli,
    softmax,
    weighted_cross_entropy,
)

__all__ = [
    "default_cohort_spec",
    "default_cohort_spec_json",
    "default_config",
    "default_config_json",
    "gradcheck_case",
    "run_cli",
    "softmax",
    "weighted_cross_entropy",
]


def default_config():
    """Default run configuration as a dict."""
    return json.loads(default_config_json())


def default_cohort_spec():
    """Default synthetic cohort spec (seed 0) as a dict."""
    return json.loads(default_cohort_spec_json())
