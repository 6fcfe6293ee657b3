"""Simulation and fast calibration of multivariate self-exciting point processes."""

from .aux_stats import AuxStats, compute_aux_stats
from .estimators import (
    FitResult,
    fit_contrast,
    fit_mean_field,
    fit_mean_field_approx,
    fit_mle,
    neg_log_likelihood,
    nll_from_theta,
    nll_gradient,
)
from .kernels import ChannelIndex, ExponentialBasis, KernelBasis
from .simulation import (
    EventSequence,
    HawkesParams,
    StabilityError,
    make_block_alpha,
    simulate_hawkes,
)

__version__ = "0.1.0"

__all__ = [
    "AuxStats",
    "ChannelIndex",
    "EventSequence",
    "ExponentialBasis",
    "FitResult",
    "HawkesParams",
    "KernelBasis",
    "StabilityError",
    "compute_aux_stats",
    "fit_contrast",
    "fit_mean_field",
    "fit_mean_field_approx",
    "fit_mle",
    "make_block_alpha",
    "neg_log_likelihood",
    "nll_from_theta",
    "nll_gradient",
    "simulate_hawkes",
    "__version__",
]
