"""Statistical linear regression of conditional densities against Gaussian
references.

Given per-step reference Gaussians (typically the current smoothing
marginals), the linearizers here produce an affine-Gaussian surrogate
model: transition triples (F, c, Q) and observation triples (H, d, R),
in covariance ("std") or Cholesky-factor ("sqrt") form.  Two rules are
available: first-order Taylor expansion around the reference mean, and
sigma-point moment matching.  Every step is linearized independently, so
a whole trajectory is processed as one batched call.

The conditional model is described by an :class:`SSMDescriptor` whose
moment functions must be vectorized over leading batch dimensions.  For
gradient support they should be written with the :mod:`ptsmooth.duals`
facade, which plain numpy inputs pass through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import duals as dn
from .duals import matvec, mT
from .errors import IndefiniteDowndateError
from .kalman import AffineModel, GaussianSequence
from .linalg import chol_psd, cholesky_downdate, clip_psd, rsolve_lower, tria

__all__ = [
    "SSMDescriptor", "TaylorLinearizer", "SigmaLinearizer", "make_linearizer",
    "linearize_model", "gslr_exact_affine", "fd_jacobian", "clip_events",
    "taylor_linearize_dyn_std", "taylor_linearize_dyn_sqrt",
    "taylor_linearize_obs_std", "taylor_linearize_obs_sqrt",
    "sigma_linearize_dyn_std", "sigma_linearize_dyn_sqrt",
    "sigma_linearize_obs_std", "sigma_linearize_obs_sqrt",
]


@dataclass(frozen=True)
class SSMDescriptor:
    """Conditional-moment description of a (possibly nonlinear) model.

    mean_dyn/chol_dyn give the conditional mean and lower Cholesky factor
    of the transition density as functions of the previous state;
    mean_obs/chol_obs the same for the observation density as functions
    of the current state.  All functions map (..., nx) batches to
    (..., k) or (..., k, k) batches.  Jacobians of the conditional means
    are optional; central finite differences are used when absent.
    Samplers are only needed for simulation and default to the Gaussian
    implied by (mean, chol).
    """

    nx: int
    ny: int
    mean_dyn: Callable
    chol_dyn: Callable
    mean_obs: Callable
    chol_obs: Callable
    m0: Any
    P0: Any
    jac_mean_dyn: Callable | None = None
    jac_mean_obs: Callable | None = None
    sample_dyn: Callable | None = None
    sample_obs: Callable | None = None
    theta: Any = None
    name: str = "ssm"

    @property
    def prior_factor(self):
        return chol_psd(dn.val(self.P0))

    def prior(self, mode: str):
        if mode == "std":
            return self.m0, self.P0
        return self.m0, self.prior_factor


class _Counter:
    """Running count of eigenvalue clips applied by std-mode sigma rules."""

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        self.count += n

    def reset(self):
        self.count = 0


clip_events = _Counter()


def fd_jacobian(fn: Callable, x, step: float = 1e-6):
    """Central-difference Jacobian of fn at x, batched over leading dims.

    The per-coordinate step is step * (1 + |x_i|).
    """
    nx = dn.val(x).shape[-1]
    cols = []
    for i in range(nx):
        h = step * (1.0 + np.abs(dn.val(x)[..., i]))
        e = np.zeros_like(dn.val(x))
        e[..., i] = h
        cols.append((fn(x + e) - fn(x - e)) / (2.0 * h)[..., None])
    return dn.stack(cols, axis=-1)


def _jac_dyn(desc: SSMDescriptor, x):
    if desc.jac_mean_dyn is not None:
        return desc.jac_mean_dyn(x)
    return fd_jacobian(desc.mean_dyn, x)


def _jac_obs(desc: SSMDescriptor, x):
    if desc.jac_mean_obs is not None:
        return desc.jac_mean_obs(x)
    return fd_jacobian(desc.mean_obs, x)


# ---------------------------------------------------------------------
# rules
# ---------------------------------------------------------------------

def _taylor(mean_fn, chol_fn, jac, means, mode):
    F = jac(means)
    c = mean_fn(means) - matvec(F, means)
    S = chol_fn(means)
    if mode == "std":
        return F, c, S @ mT(S)
    return F, c, S


def _sigma(mean_fn, chol_fn, means, scale, scheme, mode, what: str):
    """Sigma-point GSLR of one conditional density against (means, scale)."""
    nx = dn.val(means).shape[-1]
    dt = dn.val(means).dtype
    xi, wm, wc = scheme.unit_points(nx)
    xi = xi.astype(dt)
    wm = wm.astype(dt)
    wc = wc.astype(dt)

    N = scale if mode == "sqrt" else dn.cholesky(scale)
    # points (..., s, nx); transformed through the conditional mean/factor
    X = means[..., None, :] + matvec(N[..., None, :, :], xi)
    Z = mean_fn(X)
    zbar = dn.asum(wm[:, None] * Z, axis=-2)
    dz = Z - zbar[..., None, :]
    # cross term contracted against the unit points: F = (sum wc dz xi^T) N^-1
    bmat = dn.asum(wc[:, None, None] * (dz[..., :, :, None] * xi[..., None, :]), axis=-3)
    F = rsolve_lower(bmat, N, context=f"{what} reference factor")
    c = zbar - matvec(F, means)

    S_pts = chol_fn(X)                       # (..., s, k, k)
    k = dn.val(S_pts).shape[-1]
    s = xi.shape[0]
    zx = mT(np.sqrt(wc)[:, None] * dz)       # (..., k, s)
    scaled = np.sqrt(wc)[:, None, None] * S_pts
    blocks = dn.swapaxes(scaled, -3, -2).reshape(dn.val(means).shape[:-1] + (k, s * k))

    if mode == "std":
        avg_cov = dn.asum(wc[:, None, None] * (S_pts @ mT(S_pts)), axis=-3)
        cov = avg_cov + zx @ mT(zx) - F @ (N @ mT(N)) @ mT(F)
        cov, nclip = clip_psd(cov)
        if nclip:
            clip_events.add(nclip)
        return F, c, cov
    sp = tria(dn.concatenate([blocks, zx], axis=-1))
    try:
        return F, c, cholesky_downdate(sp, F @ N)
    except IndefiniteDowndateError as e:
        raise IndefiniteDowndateError(
            f"indefinite downdate while linearizing the {what} density",
            column=e.column) from e


@dataclass(frozen=True)
class TaylorLinearizer:
    """First-order expansion around the reference mean (extended-KF rule)."""

    def transition(self, desc: SSMDescriptor, means, scale, mode: str):
        return _taylor(desc.mean_dyn, desc.chol_dyn, lambda x: _jac_dyn(desc, x), means, mode)

    def observation(self, desc: SSMDescriptor, means, scale, mode: str):
        return _taylor(desc.mean_obs, desc.chol_obs, lambda x: _jac_obs(desc, x), means, mode)


@dataclass(frozen=True)
class SigmaLinearizer:
    """Sigma-point moment matching against the reference Gaussian."""

    scheme: Any

    def transition(self, desc: SSMDescriptor, means, scale, mode: str):
        return _sigma(desc.mean_dyn, desc.chol_dyn, means, scale, self.scheme, mode, "transition")

    def observation(self, desc: SSMDescriptor, means, scale, mode: str):
        return _sigma(desc.mean_obs, desc.chol_obs, means, scale, self.scheme, mode, "observation")


def make_linearizer(spec: str):
    """Parse a linearizer name: taylor | cubature | unscented | gh:<order>."""
    if spec == "taylor":
        return TaylorLinearizer()
    from .sigma_points import make_scheme
    return SigmaLinearizer(make_scheme(spec))


# ---------------------------------------------------------------------
# whole-trajectory linearization
# ---------------------------------------------------------------------

def linearize_model(desc: SSMDescriptor, nominal: GaussianSequence,
                    linearizer) -> AffineModel:
    """Affine surrogate of the model around a nominal trajectory.

    Transitions for steps 1..n are linearized about marginals 0..n-1 and
    observations about marginals 1..n.  The returned model shares the
    nominal's mode.
    """
    mode = nominal.mode
    n = len(nominal) - 1
    if n < 1:
        raise ValueError("nominal trajectory must cover at least one transition")
    F, c, Q = linearizer.transition(desc, nominal.means[:n], nominal.covs[:n], mode)
    H, d, R = linearizer.observation(desc, nominal.means[1:], nominal.covs[1:], mode)
    m0, W0 = desc.prior(mode)
    return AffineModel(F=F, c=c, Q=Q, H=H, d=d, R=R, m0=m0, P0=W0, mode=mode)


def gslr_exact_affine(H, d, Om, mean, cov):
    """Statistical linear regression computed from exact affine moments.

    For y | x ~ N(H x + d, Om) and x ~ N(mean, cov), evaluates the
    regression through the generic moment formulas; the result recovers
    (H, d, Om) up to roundoff and serves as the fixed-point reference for
    the approximate rules.
    """
    e_y = matvec(H, mean) + d
    c_xy = cov @ mT(H)
    v_y = H @ cov @ mT(H) + Om
    H_out = mT(dn.solve(mT(cov), c_xy))
    d_out = e_y - matvec(H_out, mean)
    om_out = v_y - H_out @ cov @ mT(H_out)
    return H_out, d_out, om_out


# ---------------------------------------------------------------------
# single-step convenience wrappers
# ---------------------------------------------------------------------

def _single(fn, desc, mean, scale, mode, scheme=None):
    lin = TaylorLinearizer() if scheme is None else SigmaLinearizer(scheme)
    m = mean[None] if dn.is_dual(mean) else np.asarray(mean)[None]
    s = None
    if scale is not None:
        s = scale[None] if dn.is_dual(scale) else np.asarray(scale)[None]
    out = getattr(lin, fn)(desc, m, s, mode)
    return tuple(o[0] for o in out)


def taylor_linearize_dyn_std(desc, mean, cov=None):
    return _single("transition", desc, mean, cov, "std")


def taylor_linearize_dyn_sqrt(desc, mean, chol=None):
    return _single("transition", desc, mean, chol, "sqrt")


def taylor_linearize_obs_std(desc, mean, cov=None):
    return _single("observation", desc, mean, cov, "std")


def taylor_linearize_obs_sqrt(desc, mean, chol=None):
    return _single("observation", desc, mean, chol, "sqrt")


def sigma_linearize_dyn_std(desc, mean, cov, scheme):
    return _single("transition", desc, mean, cov, "std", scheme)


def sigma_linearize_dyn_sqrt(desc, mean, chol, scheme):
    return _single("transition", desc, mean, chol, "sqrt", scheme)


def sigma_linearize_obs_std(desc, mean, cov, scheme):
    return _single("observation", desc, mean, cov, "std", scheme)


def sigma_linearize_obs_sqrt(desc, mean, chol, scheme):
    return _single("observation", desc, mean, chol, "sqrt", scheme)
