"""Diverse Bayesian optimization toolkit.

Searches for a basket of tolerable solutions -- points within a stated
tolerance of the global minimum -- rather than a single optimum, using
closed-form diverse-utility acquisitions over a Gaussian-process surrogate.
"""

from .acquisitions import (
    AcquisitionSpec,
    ToleranceState,
    acq_gradient,
    contour_acq,
    du_utility,
    edu,
    edu_dlambda,
    ei,
    gaussian_partial_moments,
    q_edu,
    q_ei_mc,
)
from .benchmarks import (
    Benchmark,
    RoverEnv,
    bowls_eval,
    bowls_registry,
    camel8_eval,
    camel8_registry,
    get_benchmark,
    load_rover_env,
    path_from_params,
    rover_benchmark,
    rover_env_from_config,
    rover_eval,
    save_rover_env,
)
from .gp import (
    Dataset,
    GpModel,
    KernelParams,
    NumericalError,
    PosteriorGaussian,
    fit_map,
    kernel_eval,
    log_map_objective,
    log_map_objective_grad,
)
from .loop import (
    Campaign,
    LoopConfig,
    Trace,
    TraceRecord,
    load_state,
    run_batch_bo,
    run_bo,
    save_state,
    tolerable,
)
from .metrics import (
    GroundTruth,
    coverage_rate,
    coverage_series,
    optimization_gap,
    sf_metrics,
    subregion_of,
)
from .optimize import (
    OptimizationError,
    OptimizerConfig,
    OptResult,
    lhs,
    maximize,
    maximize_batch,
)

__version__ = "0.1.0"

__all__ = [
    "AcquisitionSpec",
    "Benchmark",
    "Campaign",
    "Dataset",
    "GpModel",
    "GroundTruth",
    "KernelParams",
    "LoopConfig",
    "NumericalError",
    "OptResult",
    "OptimizationError",
    "OptimizerConfig",
    "PosteriorGaussian",
    "RoverEnv",
    "ToleranceState",
    "Trace",
    "TraceRecord",
    "acq_gradient",
    "bowls_eval",
    "bowls_registry",
    "camel8_eval",
    "camel8_registry",
    "contour_acq",
    "coverage_rate",
    "coverage_series",
    "du_utility",
    "edu",
    "edu_dlambda",
    "ei",
    "fit_map",
    "gaussian_partial_moments",
    "get_benchmark",
    "kernel_eval",
    "lhs",
    "load_rover_env",
    "load_state",
    "log_map_objective",
    "log_map_objective_grad",
    "maximize",
    "maximize_batch",
    "optimization_gap",
    "path_from_params",
    "q_edu",
    "q_ei_mc",
    "rover_benchmark",
    "rover_env_from_config",
    "rover_eval",
    "run_batch_bo",
    "run_bo",
    "save_rover_env",
    "save_state",
    "sf_metrics",
    "subregion_of",
    "tolerable",
]
