"""Bundled state-space models and simulators.

Two nonlinear benchmark models (a stochastic population model with Poisson
counts and a coordinated-turn bearings-only tracker), plus a seeded random
linear-Gaussian generator used as an oracle fixture throughout the tests.
Model functions are written with the duals facade so parameters and
reference points may carry forward-mode tangents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import config
from . import duals as dn
from .duals import matvec, mT
from .gslr import SSMDescriptor
from .kalman import AffineModel

__all__ = [
    "ricker_descriptor", "coordinated_turn_descriptor",
    "RandomLGSSMSpec", "random_lgssm", "simulate",
    "DEFAULT_SENSORS", "DEFAULT_CT_R",
]


# ---------------------------------------------------------------------
# stochastic Ricker population model
# ---------------------------------------------------------------------

def ricker_descriptor(a: float = 44.7, b: float = 10.0, c: float = 7.0,
                      Q: float = 0.3 ** 2, prior_eps: float = 1e-6) -> SSMDescriptor:
    """Log-population dynamics with conditionally Poisson counts.

    The latent log-population follows x' = log(a) + x - exp(x) plus
    Gaussian noise of variance Q; counts are Poisson with rate b*exp(x),
    so the conditional observation variance equals the conditional mean.
    The initial state is a point mass at log(c), realized as a Gaussian
    with standard deviation prior_eps to keep covariances invertible.
    """
    for name, v in (("a", a), ("b", b), ("c", c), ("Q", Q)):
        if float(np.min(dn.val(v))) <= 0:
            raise ValueError(f"parameter {name} must be positive")
    dt = config.dtype()
    sq = dn.sqrt(Q + np.zeros((), dtype=dt))
    log_a = dn.log(a + np.zeros((), dtype=dt))
    log_c = dn.log(c + np.zeros((), dtype=dt))
    m0 = log_c.reshape(1) if dn.is_dual(log_c) else np.asarray(log_c, dtype=dt).reshape(1)

    def mean_dyn(x):
        return log_a + x - dn.exp(x)

    def jac_dyn(x):
        return (1.0 - dn.exp(x))[..., None]

    def chol_dyn(x):
        return sq * np.ones(np.shape(dn.val(x))[:-1] + (1, 1), dtype=dn.val(x).dtype)

    def mean_obs(x):
        return b * dn.exp(x)

    def jac_obs(x):
        return (b * dn.exp(x))[..., None]

    def chol_obs(x):
        return dn.sqrt(b * dn.exp(x))[..., None]

    def sample_obs(rng, x):
        rate = float(b * np.exp(dn.val(x)[..., 0]))
        return np.array([rng.poisson(rate)], dtype=dt)

    return SSMDescriptor(
        nx=1, ny=1,
        mean_dyn=mean_dyn, chol_dyn=chol_dyn,
        mean_obs=mean_obs, chol_obs=chol_obs,
        jac_mean_dyn=jac_dyn, jac_mean_obs=jac_obs,
        m0=m0,
        P0=np.array([[prior_eps ** 2]], dtype=dt),
        sample_obs=sample_obs, name="ricker")


# ---------------------------------------------------------------------
# coordinated-turn model with bearings-only measurements
# ---------------------------------------------------------------------

# fixture choices: sensor sites and the bearing noise covariance; the first
# sensor's noise std is the usual estimation target
DEFAULT_SENSORS = ((-1.5, 0.5), (1.0, 1.0))
DEFAULT_CT_R = ((0.05 ** 2, 0.0), (0.0, 0.1 ** 2))
_OMEGA_SERIES_CUTOFF = 1e-6

_CT_M0 = (0.0, 0.0, 1.0, 0.0, 0.05)
_CT_P0_DIAG = (0.1 ** 2, 0.1 ** 2, 0.3 ** 2, 0.3 ** 2, 0.01 ** 2)


def _ct_trig(omega, dt_step):
    """sin(w*dt)/w and (1-cos(w*dt))/w with series forms near w = 0."""
    wd = omega * dt_step
    small = np.abs(dn.val(wd)) < _OMEGA_SERIES_CUTOFF
    safe = dn.where(small, np.ones_like(dn.val(omega)), omega)
    sin_w = dn.sin(wd) / safe
    cos_w = (1.0 - dn.cos(wd)) / safe
    wd2 = wd * wd
    sin_series = dt_step * (1.0 - wd2 / 6.0)
    cos_series = dt_step * wd * 0.5 * (1.0 - wd2 / 12.0)
    return dn.where(small, sin_series, sin_w), dn.where(small, cos_series, cos_w)


def coordinated_turn_descriptor(q1: float = 0.1, q2: float = 0.1, dt_step: float = 0.01,
                                sensors=DEFAULT_SENSORS, R=None,
                                m0=_CT_M0, P0_diag=_CT_P0_DIAG) -> SSMDescriptor:
    """Maneuvering-target model: state (px, py, vx, vy, omega).

    The transition rotates the velocity by omega*dt with the exact
    discretization (series expansion below |omega*dt| = 1e-6); two fixed
    sensors measure bearings atan2(py - sy, px - sx).  R may carry
    forward-mode tangents for noise-parameter estimation.
    """
    dt = config.dtype()
    if dt_step <= 0:
        raise ValueError("dt must be positive")
    sensors = np.asarray(sensors, dtype=dt)
    if R is None:
        R = np.asarray(DEFAULT_CT_R, dtype=dt)
    r_val = dn.val(np.asarray(R)) if not dn.is_dual(R) else R.val
    if not np.all(np.linalg.eigvalsh(r_val) > 0):
        raise ValueError("R must be positive definite")
    chol_R = dn.cholesky(R if dn.is_dual(R) else np.asarray(R, dtype=dt))

    # white-noise-acceleration block plus turn-rate random walk
    q_pv = np.array([[dt_step ** 3 / 3.0, dt_step ** 2 / 2.0],
                     [dt_step ** 2 / 2.0, dt_step]], dtype=dt)
    Q = np.zeros((5, 5), dtype=dt)
    Q[np.ix_([0, 2], [0, 2])] = q1 * q_pv
    Q[np.ix_([1, 3], [1, 3])] = q1 * q_pv
    Q[4, 4] = q2 * dt_step
    chol_Q = np.linalg.cholesky(Q)

    def mean_dyn(x):
        px, py = x[..., 0], x[..., 1]
        vx, vy = x[..., 2], x[..., 3]
        w = x[..., 4]
        coswd = dn.cos(w * dt_step)
        sinwd = dn.sin(w * dt_step)
        s_w, c_w = _ct_trig(w, dt_step)
        return dn.stack([
            px + s_w * vx - c_w * vy,
            py + c_w * vx + s_w * vy,
            coswd * vx - sinwd * vy,
            sinwd * vx + coswd * vy,
            w,
        ], axis=-1)

    def jac_dyn(x):
        vx, vy = x[..., 2], x[..., 3]
        w = x[..., 4]
        wd = w * dt_step
        small = np.abs(dn.val(wd)) < _OMEGA_SERIES_CUTOFF
        safe = dn.where(small, np.ones_like(dn.val(w)), w)
        coswd = dn.cos(wd)
        sinwd = dn.sin(wd)
        s_w, c_w = _ct_trig(w, dt_step)
        # d/dw of sin(w dt)/w and (1-cos(w dt))/w, with w -> 0 limits
        ds = dn.where(small, -dt_step * dt_step * wd / 3.0,
                      (wd * coswd - sinwd) / (safe * safe))
        dc = dn.where(small, dt_step * dt_step * (0.5 - wd * wd / 8.0),
                      (wd * sinwd - (1.0 - coswd)) / (safe * safe))
        zero = np.zeros_like(dn.val(w))
        one = np.ones_like(dn.val(w))
        rows = [
            dn.stack([one, zero, s_w, -c_w, ds * vx - dc * vy], axis=-1),
            dn.stack([zero, one, c_w, s_w, dc * vx + ds * vy], axis=-1),
            dn.stack([zero, zero, coswd, -sinwd,
                      dt_step * (-sinwd * vx - coswd * vy)], axis=-1),
            dn.stack([zero, zero, sinwd, coswd,
                      dt_step * (coswd * vx - sinwd * vy)], axis=-1),
            dn.stack([zero, zero, zero, zero, one], axis=-1),
        ]
        return dn.stack(rows, axis=-2)

    def chol_dyn(x):
        return chol_Q * np.ones(np.shape(dn.val(x))[:-1] + (1, 1), dtype=dn.val(x).dtype)

    def mean_obs(x):
        px, py = x[..., 0], x[..., 1]
        bearings = []
        for sx, sy in sensors:
            ex = px - sx
            ey = py - sy
            if not np.all((dn.val(ex) ** 2 + dn.val(ey) ** 2) > 0):
                raise ValueError("bearing undefined: target coincides with a sensor")
            bearings.append(dn.arctan2(ey, ex))
        return dn.stack(bearings, axis=-1)

    def jac_obs(x):
        px, py = x[..., 0], x[..., 1]
        zero = np.zeros_like(dn.val(px))
        rows = []
        for sx, sy in sensors:
            ex = px - sx
            ey = py - sy
            r2 = ex * ex + ey * ey
            rows.append(dn.stack([-ey / r2, ex / r2, zero, zero, zero], axis=-1))
        return dn.stack(rows, axis=-2)

    def chol_obs(x):
        return chol_R * np.ones(np.shape(dn.val(x))[:-1] + (1, 1), dtype=dn.val(x).dtype)

    return SSMDescriptor(
        nx=5, ny=len(sensors),
        mean_dyn=mean_dyn, chol_dyn=chol_dyn,
        mean_obs=mean_obs, chol_obs=chol_obs,
        jac_mean_dyn=jac_dyn, jac_mean_obs=jac_obs,
        m0=np.asarray(m0, dtype=dt),
        P0=np.diag(np.asarray(P0_diag, dtype=dt)),
        name="coordinated_turn")


# ---------------------------------------------------------------------
# random linear-Gaussian fixtures
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class RandomLGSSMSpec:
    """Conditioning controls for the seeded random LGSSM generator."""

    nx: int = 3
    ny: int = 2
    n: int = 50
    seed: int = 0
    spectral_radius: float = 0.9
    noise_floor: float = 0.3


def random_lgssm(spec: RandomLGSSMSpec):
    """Seeded stable LGSSM, returned as (AffineModel, SSMDescriptor).

    The transition matrix is rescaled to the requested spectral radius and
    all noise covariances are kept well conditioned, so the model is a
    safe oracle fixture.
    """
    dt = config.dtype()
    rng = np.random.default_rng(spec.seed)
    nx, ny = spec.nx, spec.ny

    G = rng.standard_normal((nx, nx))
    rho = max(abs(np.linalg.eigvals(G)))
    F = (spec.spectral_radius / rho) * G
    c = 0.2 * rng.standard_normal(nx)
    q = rng.standard_normal((nx, nx))
    Q = q @ q.T / nx + spec.noise_floor * np.eye(nx)
    H = rng.standard_normal((ny, nx))
    d = 0.2 * rng.standard_normal(ny)
    r = rng.standard_normal((ny, ny))
    R = r @ r.T / ny + spec.noise_floor * np.eye(ny)
    m0 = rng.standard_normal(nx)
    p = rng.standard_normal((nx, nx))
    P0 = p @ p.T / nx + spec.noise_floor * np.eye(nx)

    model = AffineModel.time_invariant(F, c, Q, H, d, R, m0, P0, spec.n)
    F_, c_, H_, d_ = (np.asarray(x, dtype=dt) for x in (F, c, H, d))
    chol_Q = np.linalg.cholesky(np.asarray(Q, dtype=dt))
    chol_R = np.linalg.cholesky(np.asarray(R, dtype=dt))

    desc = SSMDescriptor(
        nx=nx, ny=ny,
        mean_dyn=lambda x: matvec(np.broadcast_to(F_, np.shape(dn.val(x))[:-1] + (nx, nx)), x) + c_,
        chol_dyn=lambda x: chol_Q * np.ones(np.shape(dn.val(x))[:-1] + (1, 1), dtype=dn.val(x).dtype),
        mean_obs=lambda x: matvec(np.broadcast_to(H_, np.shape(dn.val(x))[:-1] + (ny, nx)), x) + d_,
        chol_obs=lambda x: chol_R * np.ones(np.shape(dn.val(x))[:-1] + (1, 1), dtype=dn.val(x).dtype),
        jac_mean_dyn=lambda x: F_ * np.ones(np.shape(dn.val(x))[:-1] + (1, 1), dtype=dn.val(x).dtype),
        jac_mean_obs=lambda x: H_ * np.ones(np.shape(dn.val(x))[:-1] + (1, 1), dtype=dn.val(x).dtype),
        m0=np.asarray(m0, dtype=dt),
        P0=np.asarray(P0, dtype=dt),
        name="lgssm")
    return model, desc


# ---------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------

def simulate(desc: SSMDescriptor, n: int, seed: int):
    """Draw (states x_{0:n}, observations y_{1:n}) from the model.

    Reproducible for a given seed; each call owns its RNG.  Dynamics
    default to the Gaussian implied by (mean_dyn, chol_dyn) and
    observations to (mean_obs, chol_obs) unless the descriptor supplies
    samplers (the population model samples Poisson counts).
    """
    dt = config.dtype()
    rng = np.random.default_rng(seed)
    m0 = dn.val(desc.m0).astype(dt)
    N0 = desc.prior_factor.astype(dt)
    x = m0 + N0 @ rng.standard_normal(desc.nx)
    xs = [x.astype(dt)]
    ys = []
    for _ in range(n):
        if desc.sample_dyn is not None:
            x = desc.sample_dyn(rng, x)
        else:
            x = dn.val(desc.mean_dyn(x)) + dn.val(desc.chol_dyn(x)) @ rng.standard_normal(desc.nx)
        if desc.sample_obs is not None:
            y = desc.sample_obs(rng, x)
        else:
            y = dn.val(desc.mean_obs(x)) + dn.val(desc.chol_obs(x)) @ rng.standard_normal(desc.ny)
        xs.append(np.asarray(x, dtype=dt))
        ys.append(np.asarray(y, dtype=dt))
    return np.stack(xs, axis=0), np.stack(ys, axis=0)
