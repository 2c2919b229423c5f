"""Likelihood evaluation and gradient-based parameter estimation.

The pseudo-log-likelihood of a parameterized model is the exact marginal
log-likelihood of its affine surrogate linearized about a nominal
trajectory.  At the iterated smoother's fixed point, the derivative of
the nominal trajectory with respect to the parameters satisfies a linear
fixed-point equation; iterating it with Jacobian-vector products of the
linearize+smooth operator gives the score with memory independent of the
iteration counts.  All Jacobian actions are forward-mode directional
derivatives (dual-number evaluation); no full Jacobian is ever formed.

A finite-difference oracle (re-converging the nominal for each
perturbation) guards the fixed-point implementation, and a bounded
quasi-Newton driver wraps either gradient for maximum-likelihood fits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np
import scipy.optimize

from . import duals as dn
from .duals import Dual
from .errors import ConfigError, ContractionError
from .gslr import SSMDescriptor
from .iterated import IterationConfig, iterated_smoother, smoother_pass
from .kalman import GaussianSequence, filter_log_likelihood
from .gslr import linearize_model

logger = logging.getLogger(__name__)

__all__ = [
    "pseudo_log_likelihood", "converged_nominal",
    "score_fixed_point", "score_finite_difference",
    "ScoreDiagnostics", "FitResult", "mle_fit",
]


def pseudo_log_likelihood(desc: SSMDescriptor, y, nominal: GaussianSequence,
                          cfg: IterationConfig = IterationConfig()):
    """Log-likelihood of the model linearized about the given trajectory.

    Exact for affine-Gaussian models; for nonlinear models it approximates
    the marginal log-likelihood, with the approximation tightest at the
    iterated smoother's fixed point.
    """
    model = linearize_model(desc, nominal, cfg.linearizer)
    return filter_log_likelihood(model, y, execution=cfg.execution)


def converged_nominal(desc: SSMDescriptor, y, cfg: IterationConfig,
                      init: GaussianSequence | None = None,
                      tol: float = 1e-11, max_iterations: int = 200):
    """Iterate the smoother to a tight fixed point (score precondition)."""
    tight = replace(cfg, tol=tol, max_iterations=max_iterations)
    return iterated_smoother(desc, y, init=init, cfg=tight)


@dataclass
class ScoreDiagnostics:
    """Convergence record of the tangent fixed-point iteration."""

    fixed_point_residual: float = np.inf
    tangent_iterations: list = field(default_factory=list)
    update_norms: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def _tangent_norm(x) -> float:
    return float(np.max(np.abs(x))) if x.size else 0.0


def score_fixed_point(desc_builder: Callable, theta, y, nominal: GaussianSequence,
                      cfg: IterationConfig = IterationConfig(),
                      tangent_tol: float = 1e-9,
                      max_tangent_iterations: int = 100,
                      fixed_point_tol: float = 1e-5):
    """Score of the pseudo-log-likelihood at a converged nominal trajectory.

    For each parameter coordinate, iterates the tangent fixed point

        T  <-  d(linearize+smooth)[nominal, theta] . (T, e_j)

    to convergence and contracts the result through the likelihood.  The
    nominal trajectory must (approximately) satisfy the smoother fixed
    point; its residual is reported in the diagnostics and a warning is
    recorded when it exceeds fixed_point_tol.  Raises ContractionError if
    the tangent updates fail to settle within the iteration cap.

    Only the covariance ("std") formulation is differentiable end to end:
    square-root information factors are rank-deficient whenever ny < nx,
    where the factor parametrization has no derivative.
    """
    if cfg.mode != "std":
        raise ConfigError("score_fixed_point requires mode='std'")
    theta = np.asarray(theta, dtype=np.float64)
    diag = ScoreDiagnostics()

    desc = desc_builder(theta)
    nominal = nominal.to_std()
    check, _ = smoother_pass(desc, y, nominal, cfg)
    diag.fixed_point_residual = float(
        np.max(np.abs(dn.val(check.means) - dn.val(nominal.means))))
    if diag.fixed_point_residual > fixed_point_tol:
        msg = (f"nominal trajectory is not at the smoother fixed point "
               f"(residual {diag.fixed_point_residual:.2e})")
        diag.warnings.append(msg)
        logger.warning(msg)

    means = dn.val(nominal.means)
    covs = dn.val(nominal.covs)
    grad = np.zeros(theta.size)
    for j in range(theta.size):
        e_j = np.zeros_like(theta)
        e_j[j] = 1.0
        desc_j = desc_builder(Dual(theta, e_j))
        t_m = np.zeros_like(means)
        t_p = np.zeros_like(covs)
        norms = []
        converged = False
        for it in range(1, max_tangent_iterations + 1):
            nom_d = GaussianSequence(Dual(means, t_m), Dual(covs, t_p), "std")
            out, _ = smoother_pass(desc_j, y, nom_d, cfg)
            new_m = dn.dot(out.means)
            new_p = dn.dot(out.covs)
            delta = max(_tangent_norm(new_m - t_m), _tangent_norm(new_p - t_p))
            norms.append(delta)
            t_m, t_p = new_m, new_p
            if delta < tangent_tol:
                converged = True
                break
        diag.tangent_iterations.append(it)
        diag.update_norms.append(norms)
        if not converged:
            raise ContractionError(
                f"tangent fixed point did not converge for coordinate {j} "
                f"within {max_tangent_iterations} iterations "
                f"(last updates {norms[-3:]}); the smoother map may not be "
                f"a contraction at this parameter value")
        nom_d = GaussianSequence(Dual(means, t_m), Dual(covs, t_p), "std")
        ll = pseudo_log_likelihood(desc_j, y, nom_d, cfg)
        grad[j] = float(dn.dot(ll))
    return grad, diag


def score_finite_difference(desc_builder: Callable, theta, y,
                            cfg: IterationConfig = IterationConfig(),
                            h: float = 1e-5,
                            init: GaussianSequence | None = None,
                            convergence_tol: float = 1e-11,
                            max_iterations: int = 200):
    """Central-difference score through re-converged nominal trajectories.

    Testing oracle for score_fixed_point: for each perturbed parameter the
    smoother is iterated back to its fixed point before evaluating the
    pseudo-log-likelihood.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros(theta.size)
    for j in range(theta.size):
        lls = []
        for sign in (1.0, -1.0):
            th = theta.copy()
            th[j] += sign * h
            desc = desc_builder(th)
            nom, _ = converged_nominal(desc, y, cfg, init=init,
                                       tol=convergence_tol,
                                       max_iterations=max_iterations)
            lls.append(float(dn.val(pseudo_log_likelihood(desc, y, nom, cfg))))
        grad[j] = (lls[0] - lls[1]) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------
# maximum-likelihood driver
# ---------------------------------------------------------------------

@dataclass
class FitResult:
    """Outcome of an MLE fit: estimate, final value, and per-step trace."""

    theta: np.ndarray
    log_likelihood: float
    converged: bool
    message: str
    trace: list  # (theta, log-likelihood, grad infinity norm) per evaluation

    def __iter__(self):
        # allow "theta, trace = mle_fit(...)" style unpacking
        return iter((self.theta, self.trace))


def _maximize(fun_and_grad: Callable, theta0, bounds=None,
              gtol: float = 1e-6, maxiter: int = 200):
    """Bounded quasi-Newton maximization of fun_and_grad -> (value, grad).

    Thin wrapper around L-BFGS-B; the optimizer is replaceable behind this
    interface without touching callers.
    """

    def neg(t):
        v, g = fun_and_grad(np.asarray(t, dtype=np.float64))
        return -v, -np.asarray(g, dtype=np.float64)

    res = scipy.optimize.minimize(
        neg, np.asarray(theta0, dtype=np.float64), jac=True, method="L-BFGS-B",
        bounds=bounds, options={"maxiter": maxiter, "gtol": gtol,
                                "ftol": 1e-14})
    return res


def mle_fit(desc_builder: Callable, y, theta0, bounds=None,
            cfg: IterationConfig = IterationConfig(),
            gradient: str = "fixed_point",
            gtol: float = 1e-6, maxiter: int = 200, fd_step: float = 1e-5,
            convergence_tol: float = 1e-11) -> FitResult:
    """Maximum-likelihood fit of theta by bounded quasi-Newton ascent.

    Each objective evaluation re-converges the nominal trajectory (warm
    started from the previous one) and evaluates the pseudo-log-likelihood
    there; the gradient comes from the tangent fixed point (default) or
    the finite-difference oracle.  Divergence of any inner smoothing run
    propagates as an error with the trace retained on the exception.
    """
    if gradient not in ("fixed_point", "finite_difference"):
        raise ConfigError(f"unknown gradient choice {gradient!r}")
    theta0 = np.asarray(theta0, dtype=np.float64)
    if bounds is not None:
        for (lo, hi), t in zip(bounds, theta0):
            if lo is not None and hi is not None and lo >= hi:
                raise ConfigError("bound lower >= upper")
            if (lo is not None and t < lo) or (hi is not None and t > hi):
                raise ConfigError("theta0 outside bounds")
    trace: list = []
    state: dict = {"nominal": None}

    def fun_and_grad(theta):
        desc = desc_builder(theta)
        try:
            nom, _ = converged_nominal(desc, y, cfg, init=state["nominal"],
                                       tol=convergence_tol)
        except Exception as e:
            e.mle_trace = trace  # keep the partial trace for postmortems
            raise
        state["nominal"] = nom
        ll = float(dn.val(pseudo_log_likelihood(desc, y, nom, cfg)))
        if gradient == "fixed_point":
            g, _ = score_fixed_point(desc_builder, theta, y, nom, cfg)
        else:
            g = score_finite_difference(desc_builder, theta, y, cfg,
                                        h=fd_step, init=nom,
                                        convergence_tol=convergence_tol)
        trace.append((theta.copy(), ll, float(np.max(np.abs(g)))))
        return ll, g

    res = _maximize(fun_and_grad, theta0, bounds=bounds, gtol=gtol, maxiter=maxiter)
    return FitResult(theta=np.asarray(res.x), log_likelihood=float(-res.fun),
                     converged=bool(res.success), message=str(res.message),
                     trace=trace)
