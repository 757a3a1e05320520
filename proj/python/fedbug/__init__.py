"""Federated learning with gradual unfreezing (FedBug) and its two-client theory model."""

from ._fedbug import (
    ConfigError,
    DataError,
    DomainError,
    NumericError,
    analytic_minimizer,
    contraction_ratio,
    estimate_cos2_theta,
    fl_run,
    git_blob_sha1,
    grad_check,
    partition_counts,
    resolve_config,
    step_size_window,
    theorem1_bound,
    theorem2_bound,
    theory_round,
    theory_run,
    trainable_set,
    unfreeze_count,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DomainError",
    "NumericError",
    "analytic_minimizer",
    "contraction_ratio",
    "estimate_cos2_theta",
    "fl_run",
    "git_blob_sha1",
    "grad_check",
    "partition_counts",
    "resolve_config",
    "step_size_window",
    "theorem1_bound",
    "theorem2_bound",
    "theory_round",
    "theory_run",
    "trainable_set",
    "unfreeze_count",
]
