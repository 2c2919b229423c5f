"""Sigma-point schemes: deterministic nodes and weights for Gaussian
expectations.

Each scheme generates unit-Gaussian points; linearizers transform them
affinely by the reference mean and Cholesky factor.  Covariance weights
must be positive (their square roots enter the factored evaluation) and
mean weights must sum to one; schemes violating either are rejected at
construction/use rather than silently accepted.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError

__all__ = ["CubatureScheme", "UnscentedScheme", "GaussHermiteScheme", "make_scheme"]

_MAX_POINTS = 100_000


@dataclass(frozen=True)
class CubatureScheme:
    """Spherical cubature: 2n points at +-sqrt(n) along the axes."""

    def unit_points(self, dim: int):
        return _cubature(dim)


@lru_cache(maxsize=None)
def _cubature(dim: int):
    if dim < 1:
        raise ConfigError("cubature requires dim >= 1")
    eye = np.eye(dim)
    pts = np.sqrt(float(dim)) * np.concatenate([eye, -eye], axis=0)
    w = np.full(2 * dim, 1.0 / (2 * dim))
    return pts, w, w.copy()


@dataclass(frozen=True)
class UnscentedScheme:
    """Scaled unscented transform with positivity-validated weights.

    The defaults (alpha=1, beta=0, kappa=1) give strictly positive weights
    in any dimension; combinations yielding nonpositive mean or covariance
    weights are rejected because the factored evaluation takes square
    roots of the covariance weights.
    """

    alpha: float = 1.0
    beta: float = 0.0
    kappa: float = 1.0

    def unit_points(self, dim: int):
        return _unscented(self.alpha, self.beta, self.kappa, dim)


@lru_cache(maxsize=None)
def _unscented(alpha: float, beta: float, kappa: float, dim: int):
    if dim < 1:
        raise ConfigError("unscented requires dim >= 1")
    lam = alpha * alpha * (dim + kappa) - dim
    scale = dim + lam
    if scale <= 0:
        raise ConfigError(f"unscented scaling {scale} must be positive")
    wm = np.full(2 * dim + 1, 1.0 / (2.0 * scale))
    wc = wm.copy()
    wm[0] = lam / scale
    wc[0] = lam / scale + (1.0 - alpha * alpha + beta)
    if np.any(wm <= 0.0) or np.any(wc <= 0.0):
        raise ConfigError(
            f"unscented weights must be positive; got alpha={alpha}, beta={beta}, kappa={kappa}")
    eye = np.eye(dim)
    pts = np.concatenate([np.zeros((1, dim)), np.sqrt(scale) * eye, -np.sqrt(scale) * eye], axis=0)
    return pts, wm, wc


@dataclass(frozen=True)
class GaussHermiteScheme:
    """Tensor-product Gauss-Hermite rule of a given 1-d order."""

    order: int = 3

    def unit_points(self, dim: int):
        return _gauss_hermite(self.order, dim)


@lru_cache(maxsize=None)
def _gauss_hermite(order: int, dim: int):
    if order < 1 or dim < 1:
        raise ConfigError("gauss-hermite requires order >= 1 and dim >= 1")
    if order ** dim > _MAX_POINTS:
        raise ConfigError(
            f"gauss-hermite rule has {order}**{dim} points, exceeding the {_MAX_POINTS} cap")
    # probabilists' nodes: exact for the unit Gaussian after normalization
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    weights = weights / np.sqrt(2.0 * np.pi)
    pts = np.array(list(itertools.product(nodes, repeat=dim)))
    w = np.prod(np.array(list(itertools.product(weights, repeat=dim))), axis=1)
    return pts, w, w.copy()


def make_scheme(spec: str):
    """Parse a scheme name: cubature | unscented | gh:<order>."""
    if spec == "cubature":
        return CubatureScheme()
    if spec == "unscented":
        return UnscentedScheme()
    if spec.startswith("gh:"):
        try:
            order = int(spec[3:])
        except ValueError as e:
            raise ConfigError(f"bad gauss-hermite order in {spec!r}") from e
        return GaussHermiteScheme(order)
    if spec == "gh":
        return GaussHermiteScheme()
    raise ConfigError(f"unknown sigma-point scheme {spec!r}")
