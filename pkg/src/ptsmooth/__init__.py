"""Parallel-in-time Bayesian filtering and smoothing for state-space models.

Covariance ("std") and Cholesky-factor ("sqrt") formulations of
scan-based Kalman filtering/smoothing, iterated statistical linearization
for nonlinear non-Gaussian models, and constant-memory likelihood
gradients for parameter estimation.
"""

from . import config
from .errors import (ConfigError, ContractionError, DivergenceError,
                     IndefiniteDowndateError, NumericalError, PtsmoothError,
                     SingularMatrixError)
from .kalman import (AffineModel, GaussianSequence, filter_log_likelihood,
                     parallel_filter, parallel_smoother, sequential_filter,
                     sequential_smoother)

__version__ = "0.1.0"

__all__ = [
    "config",
    "AffineModel", "GaussianSequence",
    "parallel_filter", "sequential_filter",
    "parallel_smoother", "sequential_smoother",
    "filter_log_likelihood",
    "PtsmoothError", "ConfigError", "NumericalError", "SingularMatrixError",
    "IndefiniteDowndateError", "DivergenceError", "ContractionError",
]
