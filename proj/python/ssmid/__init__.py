"""Maximum-likelihood identification of nonlinear state-space models."""

from ._ssmid import (
    SsmidError,
    bootstrap_pf,
    derivatives,
    ekf_loglik,
    estimate,
    kalman_filter,
    run_experiment,
    simulate,
)

__all__ = [
    "SsmidError",
    "bootstrap_pf",
    "derivatives",
    "ekf_loglik",
    "estimate",
    "kalman_filter",
    "run_experiment",
    "simulate",
]
