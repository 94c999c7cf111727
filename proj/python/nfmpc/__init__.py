"""Sampling-based MPC with a learned normalizing-flow sampling distribution."""

from ._core import (
    ConfigError,
    DimensionError,
    DomainError,
    FlowModel,
    bspline_smooth,
    double_integrator_step,
    first_primes,
    generate_env,
    halton_sequence,
    mppi_mean_update,
    normal_quantile,
    radical_inverse,
    run_experiment,
    sdf_query,
    shift_standard,
    softmax_weights,
    stage_cost,
    train,
    verify_fast,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "DomainError",
    "FlowModel",
    "bspline_smooth",
    "double_integrator_step",
    "first_primes",
    "generate_env",
    "halton_sequence",
    "mppi_mean_update",
    "normal_quantile",
    "radical_inverse",
    "run_experiment",
    "sdf_query",
    "shift_standard",
    "softmax_weights",
    "stage_cost",
    "train",
    "verify_fast",
]
