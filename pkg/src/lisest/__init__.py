"""Distributed Kalman-like estimation for large-scale interconnected linear systems."""

from .estimator import (
    DmreState,
    EstimatorState,
    GainSet,
    SteadyState,
    compact_dmre_step,
    dmre_step,
    estimator_step,
    local_gains,
    steady_estimator_step,
    steady_state_solve,
)
from .model import (
    LisModel,
    ModelError,
    PowerSystemConfig,
    build_topology,
    decoupling_variables,
    discretize,
    generate_power_system,
)

__version__ = "0.1.0"

__all__ = [
    "DmreState",
    "EstimatorState",
    "GainSet",
    "LisModel",
    "ModelError",
    "PowerSystemConfig",
    "SteadyState",
    "build_topology",
    "compact_dmre_step",
    "decoupling_variables",
    "discretize",
    "dmre_step",
    "estimator_step",
    "generate_power_system",
    "local_gains",
    "steady_estimator_step",
    "steady_state_solve",
]
