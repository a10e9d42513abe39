"""Weighted ensemble Kalman samplers for Bayesian inverse problems."""

from .ensemble import (
    AllWeightsVanished,
    EnsembleStats,
    WeightedEnsemble,
    effective_sample_size,
    normalize_weights,
    stats,
    systematic_resample,
    weight_variance,
    weighted_moment,
)
from .model import (
    BUILTIN_PROBLEMS,
    ForwardModel,
    GaussianPrior,
    InverseProblem,
    TemperedDensity,
    builtin_problem,
    curvature_w,
    finite_difference_model,
    linear_model,
    log_unnormalized_density,
    misfit,
    score_v,
)
from .numkit import NotSpd, NumericalError, RandomSource, SpdFactor, gaussian_vector, spd_solve
from .samplers import (
    METHODS,
    SamplerConfig,
    StepFailure,
    Trajectory,
    enki_step,
    ensrf_step,
    importance_sampling,
    run,
    wenkf_weights,
    wenki_step,
    wensrf_step,
)

__version__ = "0.1.0"

__all__ = [
    "AllWeightsVanished",
    "builtin_problem",
    "BUILTIN_PROBLEMS",
    "curvature_w",
    "effective_sample_size",
    "enki_step",
    "EnsembleStats",
    "ensrf_step",
    "finite_difference_model",
    "ForwardModel",
    "gaussian_vector",
    "GaussianPrior",
    "importance_sampling",
    "InverseProblem",
    "linear_model",
    "log_unnormalized_density",
    "METHODS",
    "misfit",
    "normalize_weights",
    "NotSpd",
    "NumericalError",
    "RandomSource",
    "run",
    "SamplerConfig",
    "score_v",
    "spd_solve",
    "SpdFactor",
    "stats",
    "StepFailure",
    "systematic_resample",
    "TemperedDensity",
    "Trajectory",
    "weight_variance",
    "weighted_moment",
    "WeightedEnsemble",
    "wenkf_weights",
    "wenki_step",
    "wensrf_step",
]
