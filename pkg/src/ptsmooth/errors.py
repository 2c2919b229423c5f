"""Exception hierarchy.

Numerical failures are deliberately loud and typed: square-root code must
distinguish "the downdate went indefinite" from "a triangular factor is
singular", and iterated smoothers must report divergence with the
iteration where it happened instead of silently emitting NaNs.
"""

from __future__ import annotations


class PtsmoothError(Exception):
    """Base class for all package errors."""


class ConfigError(PtsmoothError):
    """Invalid run configuration (CLI flags, config file, scheme parameters)."""


class NumericalError(PtsmoothError):
    """Base class for numerical failures during filtering/smoothing."""


class SingularMatrixError(NumericalError):
    """A (triangular or innovation) matrix is singular to working precision."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class IndefiniteDowndateError(NumericalError):
    """A Cholesky rank-1 downdate hit a nonpositive pivot.

    Signals loss of positive definiteness; callers may abort or regularize,
    but regularization is never applied silently.
    """

    def __init__(self, message: str = "rank-1 downdate pivot is nonpositive",
                 column: int | None = None, step: int | None = None):
        self.column = column
        self.step = step
        details = []
        if column is not None:
            details.append(f"column {column}")
        if step is not None:
            details.append(f"step {step}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class DivergenceError(NumericalError):
    """An iterated run produced a non-finite trajectory or likelihood."""

    def __init__(self, message: str, iteration: int | None = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class ContractionError(NumericalError):
    """The tangent fixed-point iteration failed to contract."""
