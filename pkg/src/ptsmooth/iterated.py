"""Iterated posterior-linearization smoothing.

Each iteration linearizes the model around the current nominal trajectory
and runs one filter+smoother pass on the affine surrogate; the fixed
point of that map is the iterated smoothing solution.  With the Taylor
rule this is the iterated extended smoother, with sigma-point rules the
iterated cubature/unscented/Gauss-Hermite smoothers, each in standard or
square-root arithmetic and with sequential or scan-based execution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from . import duals as dn
from .errors import DivergenceError, NumericalError
from .gslr import SSMDescriptor, TaylorLinearizer, clip_events, linearize_model
from .kalman import (GaussianSequence, _loglik_terms, parallel_filter,
                     parallel_smoother, sequential_filter, sequential_smoother)

logger = logging.getLogger(__name__)

__all__ = ["IterationConfig", "IterationDiagnostics", "default_init",
           "iterated_smoother", "smoother_pass", "prediction_init"]


@dataclass(frozen=True)
class IterationConfig:
    """Settings for the iterated smoother.

    tol=None iterates exactly max_iterations times; otherwise iteration
    stops early once the infinity norm of the mean update drops below tol.
    """

    max_iterations: int = 20
    tol: float | None = 1e-6
    mode: str = "std"
    linearizer: Any = field(default_factory=TaylorLinearizer)
    execution: str = "parallel"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tol is not None and self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.mode not in ("std", "sqrt"):
            raise ValueError(f"mode must be 'std' or 'sqrt', got {self.mode!r}")
        if self.execution not in ("sequential", "parallel"):
            raise ValueError(f"execution must be 'sequential' or 'parallel', got {self.execution!r}")


@dataclass
class IterationDiagnostics:
    """Per-iteration log-likelihoods, mean updates, and clip counts."""

    log_likelihoods: list = field(default_factory=list)
    mean_changes: list = field(default_factory=list)
    clipped: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.log_likelihoods)


def default_init(desc: SSMDescriptor, n: int, mode: str = "std") -> GaussianSequence:
    """Prior-replicated nominal trajectory of length n+1 (overridable)."""
    m0, W0 = desc.prior(mode)
    m0 = dn.val(m0)
    W0 = dn.val(W0)
    means = np.broadcast_to(m0, (n + 1,) + m0.shape).copy()
    covs = np.broadcast_to(W0, (n + 1,) + W0.shape).copy()
    return GaussianSequence(means, covs, mode)


def smoother_pass(desc: SSMDescriptor, y, nominal: GaussianSequence, cfg: IterationConfig):
    """One linearize + filter + smooth step; returns (smoothed, loglik)."""
    model = linearize_model(desc, nominal, cfg.linearizer)
    if cfg.execution == "parallel":
        filt = parallel_filter(model, y)
        smoothed = parallel_smoother(model, filt)
    else:
        filt = sequential_filter(model, y)
        smoothed = sequential_smoother(model, filt)
    terms = _loglik_terms(model, y, filt)
    return smoothed, dn.asum(terms)


def iterated_smoother(desc: SSMDescriptor, y, init: GaussianSequence | None = None,
                      cfg: IterationConfig = IterationConfig()):
    """Iterate linearize/smooth until convergence or the iteration cap.

    Returns (nominal trajectory, diagnostics).  Numerical errors from the
    inner pass are re-raised with the iteration attached; a non-finite
    trajectory or log-likelihood raises DivergenceError rather than being
    silently restarted.
    """
    n = dn.val(y).shape[0]
    nominal = init if init is not None else default_init(desc, n, cfg.mode)
    if len(nominal) != n + 1:
        raise ValueError("initial trajectory must have length n + 1")
    if nominal.mode != cfg.mode:
        nominal = nominal.to_sqrt() if cfg.mode == "sqrt" else nominal.to_std()
    diag = IterationDiagnostics()
    for it in range(1, cfg.max_iterations + 1):
        clip_before = clip_events.count
        try:
            smoothed, ll = smoother_pass(desc, y, nominal, cfg)
        except DivergenceError:
            raise
        except NumericalError as e:
            raise DivergenceError(f"smoother pass failed: {e}", iteration=it) from e
        except np.linalg.LinAlgError as e:
            raise DivergenceError(f"linear algebra breakdown: {e}", iteration=it) from e
        ll = float(dn.val(ll))
        if not (np.all(np.isfinite(dn.val(smoothed.means)))
                and np.all(np.isfinite(dn.val(smoothed.covs)))
                and np.isfinite(ll)):
            raise DivergenceError("non-finite trajectory or log-likelihood", iteration=it)
        change = float(np.max(np.abs(dn.val(smoothed.means) - dn.val(nominal.means))))
        nominal = smoothed
        diag.log_likelihoods.append(ll)
        diag.mean_changes.append(change)
        diag.clipped.append(clip_events.count - clip_before)
        if cfg.tol is not None and change < cfg.tol:
            break
    if diag.clipped and sum(diag.clipped):
        logger.warning("eigenvalue clipping applied %d times during iteration",
                       sum(diag.clipped))
    return nominal, diag


def prediction_init(desc: SSMDescriptor, y, mode: str = "std",
                    linearizer=None) -> GaussianSequence:
    """Filter-prediction initial trajectory.

    Runs one classical linearized (extended/sigma-point) filter pass,
    relinearizing per step: dynamics about the current filtered marginal,
    observations about the predicted one.  The filtered marginals seed
    iterated runs; with max_iterations=1 the result is the classical
    non-iterated smoother about this trajectory.
    """
    from .linalg import rsolve_lower, tria
    from .duals import matvec, mT

    if linearizer is None:
        linearizer = TaylorLinearizer()
    n = dn.val(y).shape[0]
    m, W = desc.prior(mode)
    m = dn.val(m)
    W = dn.val(W)
    means, covs = [m], [W]
    for k in range(n):
        F, c, Q = (t[0] for t in linearizer.transition(desc, m[None], W[None], mode))
        mp = matvec(F, m) + c
        if mode == "std":
            Pp = F @ W @ mT(F) + Q
            H, d, R = (t[0] for t in linearizer.observation(desc, mp[None], Pp[None], mode))
            S = H @ Pp @ mT(H) + R
            K = mT(dn.solve(mT(S), H @ mT(Pp)))
            m = mp + matvec(K, y[k] - matvec(H, mp) - d)
            W = Pp - K @ S @ mT(K)
        else:
            Np = tria(dn.concatenate([F @ W, Q], axis=-1))
            H, d, R = (t[0] for t in linearizer.observation(desc, mp[None], Np[None], mode))
            ny = dn.val(H).shape[-2]
            top = dn.concatenate([H @ Np, R], axis=-1)
            bot = dn.concatenate([Np, np.zeros((desc.nx, ny), dtype=dn.val(Np).dtype)], axis=-1)
            psi = tria(dn.concatenate([top, bot], axis=-2))
            K = rsolve_lower(psi[..., ny:, :ny], psi[..., :ny, :ny],
                             context="innovation factor")
            m = mp + matvec(K, y[k] - matvec(H, mp) - d)
            W = psi[..., ny:, ny:]
        means.append(m)
        covs.append(W)
    return GaussianSequence(dn.stack(means, axis=0), dn.stack(covs, axis=0), mode)
