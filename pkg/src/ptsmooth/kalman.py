"""Filtering and smoothing for affine-Gaussian state-space models.

Four variants are provided: {sequential, parallel} x {standard,
square-root}.  The sequential recursions are the classical Kalman filter
and RTS smoother and double as correctness oracles for the scan-based
parallel variants.  The standard variants carry covariances; the
square-root variants carry lower-triangular Cholesky factors end to end
and never form a covariance, which keeps them positive semidefinite by
construction and roughly halves the precision needed.

Model convention, for k = 1..n:

    x_k = F[k-1] x_{k-1} + c[k-1] + q_{k-1},   q ~ N(0, Q[k-1])
    y_k = H[k-1] x_k     + d[k-1] + v_k,       v ~ N(0, R[k-1])

with x_0 ~ N(m0, P0).  In "sqrt" mode the Q/R/P0 slots hold the lower
Cholesky factors of the corresponding covariances.

Filter scan elements are quintuples, combined associatively:
standard (A, b, C, eta, J), square-root (A, b, U, eta, Z) with
C = U U^T and J = Z Z^T.  Smoother elements are triples (E, g, L) or
(E, g, D) with L = D D^T.  All element stacks are struct-of-sequences:
the leading axis indexes the time step, which keeps the scan vectorized
and cache-friendly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from . import config
from . import duals as dn
from . import scan as _scan
from .duals import matvec, mT
from .errors import SingularMatrixError
from .linalg import (chol_psd, rsolve_lower, solve_lower, tria)

__all__ = [
    "AffineModel", "GaussianSequence",
    "filter_elements", "std_filter_element", "sqrt_filter_element",
    "combine_filter_std", "combine_filter_sqrt",
    "smoother_elements", "std_smoother_element", "sqrt_smoother_element",
    "combine_smoother_std", "combine_smoother_sqrt",
    "parallel_filter", "sequential_filter",
    "parallel_smoother", "sequential_smoother",
    "filter_log_likelihood",
    "identity_filter_element", "identity_smoother_element",
]

_LOG_2PI = math.log(2.0 * math.pi)


def _strictly_lower(x) -> bool:
    v = dn.val(x)
    k = v.shape[-1]
    if k <= 1:
        return True
    iu = np.triu_indices(k, 1)
    return not np.any(v[..., iu[0], iu[1]])


@dataclass
class AffineModel:
    """Affine-Gaussian model with stacked per-step parameters.

    All arrays carry the step index on the leading axis (length n).  In
    mode "sqrt" the noise slots Q, R and the prior slot P0 hold lower
    Cholesky factors instead of covariances.
    """

    F: Any
    c: Any
    Q: Any
    H: Any
    d: Any
    R: Any
    m0: Any
    P0: Any
    mode: str = "std"

    def __post_init__(self):
        if self.mode not in ("std", "sqrt"):
            raise ValueError(f"mode must be 'std' or 'sqrt', got {self.mode!r}")
        n = dn.val(self.F).shape[0]
        for name in ("c", "Q", "H", "d", "R"):
            if dn.val(getattr(self, name)).shape[0] != n:
                raise ValueError(f"step count mismatch in field {name}")
        if self.mode == "sqrt":
            for name in ("Q", "R", "P0"):
                if not _strictly_lower(getattr(self, name)):
                    raise ValueError(f"{name} must be lower triangular in sqrt mode")

    @property
    def n_steps(self) -> int:
        return dn.val(self.F).shape[0]

    @property
    def nx(self) -> int:
        return dn.val(self.F).shape[-1]

    @property
    def ny(self) -> int:
        return dn.val(self.H).shape[-2]

    @classmethod
    def time_invariant(cls, F, c, Q, H, d, R, m0, P0, n: int,
                       mode: str = "std") -> "AffineModel":
        """Broadcast constant per-step parameters over n steps."""
        dt = config.dtype()

        def rep(x, extra):
            x = np.asarray(x, dtype=dt)
            return np.broadcast_to(x, (n,) + x.shape[-extra:])

        return cls(F=rep(F, 2), c=rep(c, 1), Q=rep(Q, 2), H=rep(H, 2),
                   d=rep(d, 1), R=rep(R, 2),
                   m0=np.asarray(m0, dtype=dt), P0=np.asarray(P0, dtype=dt),
                   mode=mode)

    def to_sqrt(self) -> "AffineModel":
        if self.mode == "sqrt":
            return self
        return replace(self, Q=chol_psd(self.Q), R=chol_psd(self.R),
                       P0=chol_psd(self.P0), mode="sqrt")

    def to_std(self) -> "AffineModel":
        if self.mode == "std":
            return self
        return replace(self, Q=self.Q @ mT(self.Q), R=self.R @ mT(self.R),
                       P0=self.P0 @ mT(self.P0), mode="std")


@dataclass
class GaussianSequence:
    """Sequence of Gaussian marginals (means plus covariances or factors)."""

    means: Any   # (T, nx)
    covs: Any    # (T, nx, nx); lower factors in sqrt mode
    mode: str = "std"

    def __len__(self) -> int:
        return dn.val(self.means).shape[0]

    def covariances(self):
        """Covariances regardless of mode (factors are squared)."""
        if self.mode == "std":
            return self.covs
        return self.covs @ mT(self.covs)

    def to_std(self) -> "GaussianSequence":
        if self.mode == "std":
            return self
        return GaussianSequence(self.means, self.covs @ mT(self.covs), "std")

    def to_sqrt(self) -> "GaussianSequence":
        if self.mode == "sqrt":
            return self
        return GaussianSequence(self.means, chol_psd(self.covs), "sqrt")


def _eye(k: int, like) -> np.ndarray:
    return np.eye(k, dtype=dn.val(like).dtype)


def _zeros(shape, like) -> np.ndarray:
    return np.zeros(shape, dtype=dn.val(like).dtype)


# ---------------------------------------------------------------------
# filter elements
# ---------------------------------------------------------------------

def _square_up(z, nx: int, ny: int):
    # make the information factor square: pad with zero columns when the
    # state outranks the observation, triangularize when it is outranked
    if nx > ny:
        b = dn.val(z).shape[:-2]
        return dn.concatenate([z, _zeros(b + (nx, nx - ny), z)], axis=-1)
    if nx < ny:
        return tria(z)
    return z


def _first_bad_diag(Y, offset: int) -> int | None:
    """Index of the first factor in a stack with a singular diagonal."""
    d = np.abs(np.diagonal(dn.val(Y), axis1=-2, axis2=-1))
    if d.ndim < 2:
        return offset
    dmax = np.max(d, axis=-1, keepdims=True)
    tol = config.solve_rtol() * config.eps(d.dtype) * dmax
    bad = np.any((d <= tol) | ~np.isfinite(d), axis=-1)
    if not np.any(bad):
        return None
    return int(np.argmax(bad)) + offset


def _first_singular_step(S, offset: int) -> int | None:
    """Best-effort index of the first singular/non-finite matrix in a stack."""
    S = dn.val(S)
    if S.ndim < 3:
        return offset if S.shape[0] else None
    finite = np.isfinite(S).all(axis=(-1, -2))
    with np.errstate(all="ignore"):
        sign, logdet = np.linalg.slogdet(np.where(finite[..., None, None], S, np.eye(S.shape[-1], dtype=S.dtype)))
    bad = (~finite) | (sign == 0) | ~np.isfinite(logdet)
    if not np.any(bad):
        return None
    return int(np.argmax(bad)) + offset


def _filter_elements_std(model: AffineModel, y):
    F, c, Q, H, d, R = model.F, model.c, model.Q, model.H, model.d, model.R
    nx = model.nx
    n = dn.val(y).shape[0]
    I = _eye(nx, F)

    # step 1 folds the prior into the element
    F1, c1, Q1 = F[0:1], c[0:1], Q[0:1]
    H1, d1, R1 = H[0:1], d[0:1], R[0:1]
    m1 = matvec(F1, model.m0[None]) + c1
    P1 = F1 @ model.P0[None] @ mT(F1) + Q1
    S1 = H1 @ P1 @ mT(H1) + R1
    try:
        K1 = mT(dn.solve(mT(S1), H1 @ mT(P1)))
        r1 = y[0:1] - matvec(H1, m1) - d1
        b1 = m1 + matvec(K1, r1)
        C1 = P1 - K1 @ S1 @ mT(K1)
        A1 = _zeros((1, nx, nx), F)
        G1 = mT(H1 @ F1)
        J1 = G1 @ dn.solve(S1, H1 @ F1)
        rc1 = y[0:1] - matvec(H1, c1) - d1
        eta1 = matvec(G1, dn.solve(S1, rc1[..., None])[..., 0])
    except np.linalg.LinAlgError as e:
        raise SingularMatrixError("singular innovation covariance", step=1) from e
    if n == 1:
        return A1, b1, C1, eta1, J1

    Fk, ck, Qk = F[1:], c[1:], Q[1:]
    Hk, dk, Rk = H[1:], d[1:], R[1:]
    Sk = Hk @ Qk @ mT(Hk) + Rk
    try:
        Kk = mT(dn.solve(mT(Sk), Hk @ mT(Qk)))
        ImKH = I - Kk @ Hk
        Ak = ImKH @ Fk
        Ck = ImKH @ Qk
        resid = y[1:] - matvec(Hk, ck) - dk
        bk = ck + matvec(Kk, resid)
        Gk = mT(Hk @ Fk)
        Jk = Gk @ dn.solve(Sk, Hk @ Fk)
        etak = matvec(Gk, dn.solve(Sk, resid[..., None])[..., 0])
    except np.linalg.LinAlgError as e:
        raise SingularMatrixError("singular innovation covariance",
                                  step=_first_singular_step(Sk, 2)) from e

    A = dn.concatenate([A1, Ak], axis=0)
    b = dn.concatenate([b1, bk], axis=0)
    C = dn.concatenate([C1, Ck], axis=0)
    eta = dn.concatenate([eta1, etak], axis=0)
    J = dn.concatenate([J1, Jk], axis=0)
    return A, b, C, eta, J


def _filter_elements_sqrt(model: AffineModel, y):
    F, c, Q, H, d, R = model.F, model.c, model.Q, model.H, model.d, model.R
    nx, ny = model.nx, model.ny
    n = dn.val(y).shape[0]
    I = _eye(nx, F)

    def psi_blocks(pred_factor, Hk, Rk):
        b = dn.val(pred_factor).shape[:-2]
        top = dn.concatenate([Hk @ pred_factor, Rk], axis=-1)
        bot = dn.concatenate([pred_factor, _zeros(b + (nx, ny), Rk)], axis=-1)
        psi = tria(dn.concatenate([top, bot], axis=-2))
        Y = psi[..., :ny, :ny]
        P21 = psi[..., ny:, :ny]
        U = psi[..., ny:, ny:]
        return Y, P21, U

    # step 1 folds the prior in through the one-step predictive factor
    F1, c1, Q1 = F[0:1], c[0:1], Q[0:1]
    H1, d1, R1 = H[0:1], d[0:1], R[0:1]
    N1 = tria(dn.concatenate([F1 @ model.P0[None], Q1], axis=-1))
    Y1, P21_1, U1 = psi_blocks(N1, H1, R1)
    try:
        K1 = rsolve_lower(P21_1, Y1, context="innovation factor")
        m1 = matvec(F1, model.m0[None]) + c1
        b1 = m1 + matvec(K1, y[0:1] - matvec(H1, m1) - d1)
        A1 = _zeros((1, nx, nx), F)
        Zp1 = mT(solve_lower(Y1, H1 @ F1, context="innovation factor"))
        rc1 = y[0:1] - matvec(H1, c1) - d1
        eta1 = matvec(Zp1, solve_lower(Y1, rc1[..., None], context="innovation factor")[..., 0])
    except SingularMatrixError as e:
        raise SingularMatrixError("singular innovation factor", step=1) from e
    Z1 = _square_up(Zp1, nx, ny)
    if n == 1:
        return A1, b1, U1, eta1, Z1

    Fk, ck, Qk = F[1:], c[1:], Q[1:]
    Hk, dk, Rk = H[1:], d[1:], R[1:]
    Yk, P21k, Uk = psi_blocks(Qk, Hk, Rk)
    try:
        Kk = rsolve_lower(P21k, Yk, context="innovation factor")
        Ak = (I - Kk @ Hk) @ Fk
        resid = y[1:] - matvec(Hk, ck) - dk
        bk = ck + matvec(Kk, resid)
        Zpk = mT(solve_lower(Yk, Hk @ Fk, context="innovation factor"))
        etak = matvec(Zpk, solve_lower(Yk, resid[..., None], context="innovation factor")[..., 0])
    except SingularMatrixError as e:
        raise SingularMatrixError("singular innovation factor",
                                  step=_first_bad_diag(Yk, 2)) from e
    Zk = _square_up(Zpk, nx, ny)

    A = dn.concatenate([A1, Ak], axis=0)
    b = dn.concatenate([b1, bk], axis=0)
    U = dn.concatenate([U1, Uk], axis=0)
    eta = dn.concatenate([eta1, etak], axis=0)
    Z = dn.concatenate([Z1, Zk], axis=0)
    return A, b, U, eta, Z


def filter_elements(model: AffineModel, y):
    """Scan elements for all steps, in the model's mode."""
    if dn.val(y).shape[0] != model.n_steps:
        raise ValueError("observation count does not match the model")
    if model.mode == "std":
        return _filter_elements_std(model, y)
    return _filter_elements_sqrt(model, y)


def std_filter_element(model: AffineModel, y, k: int):
    """Element for step k (1-based) of a standard-mode model."""
    elems = _filter_elements_std(model.to_std(), y)
    return tuple(e[k - 1] for e in elems)


def sqrt_filter_element(model: AffineModel, y, k: int):
    """Element for step k (1-based) of a square-root-mode model."""
    elems = _filter_elements_sqrt(model.to_sqrt(), y)
    return tuple(e[k - 1] for e in elems)


def identity_filter_element(nx: int, mode: str = "std"):
    """Two-sided identity of the filtering combine."""
    I = np.eye(nx, dtype=config.dtype())
    z = np.zeros((nx, nx), dtype=config.dtype())
    v = np.zeros(nx, dtype=config.dtype())
    return (I, v, z, v, z)


# ---------------------------------------------------------------------
# filter combination
# ---------------------------------------------------------------------

def combine_filter_std(ei, ej):
    """Associative combine of standard filter elements (earlier, later)."""
    A_i, b_i, C_i, eta_i, J_i = ei
    A_j, b_j, C_j, eta_j, J_j = ej
    nx = dn.val(A_i).shape[-1]
    I = _eye(nx, A_i)
    try:
        M = I + C_i @ J_j
        A_ij = A_j @ dn.solve(M, A_i)
        b_ij = matvec(A_j, dn.solve(M, (b_i + matvec(C_i, eta_j))[..., None])[..., 0]) + b_j
        C_ij = A_j @ dn.solve(M, C_i) @ mT(A_j) + C_j
        Mt = I + J_j @ C_i
        eta_ij = matvec(mT(A_i), dn.solve(Mt, (eta_j - matvec(J_j, b_i))[..., None])[..., 0]) + eta_i
        J_ij = mT(A_i) @ dn.solve(Mt, J_j) @ A_i + J_i
    except np.linalg.LinAlgError as e:
        raise SingularMatrixError(f"singular filter combine: {e}") from e
    return A_ij, b_ij, C_ij, eta_ij, J_ij


def combine_filter_sqrt(ei, ej):
    """Associative combine of square-root filter elements (earlier, later)."""
    A_i, b_i, U_i, eta_i, Z_i = ei
    A_j, b_j, U_j, eta_j, Z_j = ej
    nx = dn.val(A_i).shape[-1]
    batch = dn.val(A_i).shape[:-2]
    I = _eye(nx, A_i)

    top = dn.concatenate([mT(U_i) @ Z_j, I + _zeros(batch + (nx, nx), A_i)], axis=-1)
    bot = dn.concatenate([Z_j, _zeros(batch + (nx, nx), A_i)], axis=-1)
    xi = tria(dn.concatenate([top, bot], axis=-2))
    xi11 = xi[..., :nx, :nx]
    xi21 = xi[..., nx:, :nx]
    xi22 = xi[..., nx:, nx:]

    # U_i Xi11^-T and the two projections (I - ...) from the factored inverse
    T1 = mT(solve_lower(xi11, mT(U_i), context="filter combine factor"))
    G = I - T1 @ mT(xi21)
    Gt = I - xi21 @ solve_lower(xi11, mT(U_i), context="filter combine factor")

    A_ij = A_j @ G @ A_i
    b_ij = matvec(A_j @ G, b_i + matvec(U_i, matvec(mT(U_i), eta_j))) + b_j
    U_ij = tria(dn.concatenate([A_j @ T1, U_j], axis=-1))
    eta_ij = matvec(mT(A_i) @ Gt, eta_j - matvec(Z_j, matvec(mT(Z_j), b_i))) + eta_i
    Z_ij = tria(dn.concatenate([mT(A_i) @ xi22, Z_i], axis=-1))
    return A_ij, b_ij, U_ij, eta_ij, Z_ij


# ---------------------------------------------------------------------
# smoother elements and combination
# ---------------------------------------------------------------------

def smoother_elements(model: AffineModel, filt: GaussianSequence):
    """Scan elements for the smoother, indices 0..n (n+1 elements)."""
    if filt.mode != model.mode:
        raise ValueError("filter result mode does not match the model")
    F, c, Q = model.F, model.c, model.Q
    n = model.n_steps
    mf, Wf = filt.means[:n], filt.covs[:n]
    if model.mode == "std":
        try:
            Pp = F @ Wf @ mT(F) + Q
            E = mT(dn.solve(mT(Pp), F @ mT(Wf)))
        except np.linalg.LinAlgError as e:
            raise SingularMatrixError(f"singular predictive covariance: {e}") from e
        g = mf - matvec(E, matvec(F, mf) + c)
        L = Wf - E @ F @ Wf
        E_n = _zeros((1,) + dn.val(E).shape[-2:], E)
        E = dn.concatenate([E, E_n], axis=0)
        g = dn.concatenate([g, filt.means[n:]], axis=0)
        L = dn.concatenate([L, filt.covs[n:]], axis=0)
        return E, g, L

    nx = model.nx
    batch = dn.val(Wf).shape[:-2]
    top = dn.concatenate([F @ Wf, Q], axis=-1)
    bot = dn.concatenate([Wf, _zeros(batch + (nx, nx), Q)], axis=-1)
    phi = tria(dn.concatenate([top, bot], axis=-2))
    phi11 = phi[..., :nx, :nx]
    phi21 = phi[..., nx:, :nx]
    D = phi[..., nx:, nx:]
    E = rsolve_lower(phi21, phi11, context="predictive factor")
    g = mf - matvec(E, matvec(F, mf) + c)
    E_n = _zeros((1, nx, nx), E)
    E = dn.concatenate([E, E_n], axis=0)
    g = dn.concatenate([g, filt.means[n:]], axis=0)
    D = dn.concatenate([D, filt.covs[n:]], axis=0)
    return E, g, D


def std_smoother_element(model: AffineModel, filt: GaussianSequence, k: int):
    """Smoother element at index k (0-based) for standard mode."""
    elems = smoother_elements(model.to_std(), filt.to_std())
    return tuple(e[k] for e in elems)


def sqrt_smoother_element(model: AffineModel, filt: GaussianSequence, k: int):
    elems = smoother_elements(model.to_sqrt(), filt.to_sqrt())
    return tuple(e[k] for e in elems)


def identity_smoother_element(nx: int):
    """Two-sided identity of the smoothing combine."""
    I = np.eye(nx, dtype=config.dtype())
    return (I, np.zeros(nx, dtype=config.dtype()),
            np.zeros((nx, nx), dtype=config.dtype()))


def combine_smoother_std(ei, ej):
    E_i, g_i, L_i = ei
    E_j, g_j, L_j = ej
    return (E_i @ E_j, matvec(E_i, g_j) + g_i, E_i @ L_j @ mT(E_i) + L_i)


def combine_smoother_sqrt(ei, ej):
    E_i, g_i, D_i = ei
    E_j, g_j, D_j = ej
    return (E_i @ E_j, matvec(E_i, g_j) + g_i,
            tria(dn.concatenate([E_i @ D_j, D_i], axis=-1)))


# ---------------------------------------------------------------------
# filters and smoothers
# ---------------------------------------------------------------------

def _as_mode(model: AffineModel, mode: str | None) -> AffineModel:
    if mode is None or mode == model.mode:
        return model
    return model.to_sqrt() if mode == "sqrt" else model.to_std()


def parallel_filter(model: AffineModel, y, mode: str | None = None) -> GaussianSequence:
    """Filtering marginals via an associative scan over filter elements.

    Index 0 of the result is the prior; index k the marginal given
    y_{1:k}.  In sqrt mode the result carries factors.
    """
    model = _as_mode(model, mode)
    elems = filter_elements(model, y)
    combine = combine_filter_std if model.mode == "std" else combine_filter_sqrt
    scanned = _scan.associative_scan_stacked(elems, combine)
    means = dn.concatenate([model.m0[None], scanned[1]], axis=0)
    covs = dn.concatenate([model.P0[None], scanned[2]], axis=0)
    return GaussianSequence(means, covs, model.mode)


def sequential_filter(model: AffineModel, y, mode: str | None = None) -> GaussianSequence:
    """Classical Kalman filter recursion (oracle for the parallel variant)."""
    model = _as_mode(model, mode)
    F, c, Q, H, d, R = model.F, model.c, model.Q, model.H, model.d, model.R
    n = model.n_steps
    nx, ny = model.nx, model.ny
    m, W = model.m0, model.P0
    means, covs = [m], [W]
    try:
        for k in range(n):
            mp = matvec(F[k], m) + c[k]
            if model.mode == "std":
                Pp = F[k] @ W @ mT(F[k]) + Q[k]
                S = H[k] @ Pp @ mT(H[k]) + R[k]
                K = mT(dn.solve(mT(S), H[k] @ mT(Pp)))
                r = y[k] - matvec(H[k], mp) - d[k]
                m = mp + matvec(K, r)
                W = Pp - K @ S @ mT(K)
            else:
                Np = tria(dn.concatenate([F[k] @ W, Q[k]], axis=-1))
                top = dn.concatenate([H[k] @ Np, R[k]], axis=-1)
                bot = dn.concatenate([Np, _zeros((nx, ny), R)], axis=-1)
                psi = tria(dn.concatenate([top, bot], axis=-2))
                Y = psi[..., :ny, :ny]
                K = rsolve_lower(psi[..., ny:, :ny], Y, context="innovation factor")
                r = y[k] - matvec(H[k], mp) - d[k]
                m = mp + matvec(K, r)
                W = psi[..., ny:, ny:]
            means.append(m)
            covs.append(W)
    except np.linalg.LinAlgError as e:
        raise SingularMatrixError(f"singular innovation covariance at step {k + 1}: {e}") from e
    return GaussianSequence(dn.stack(means, axis=0), dn.stack(covs, axis=0), model.mode)


def parallel_smoother(model: AffineModel, filt: GaussianSequence,
                      mode: str | None = None) -> GaussianSequence:
    """Smoothing marginals via a reversed associative scan."""
    model = _as_mode(model, mode)
    elems = smoother_elements(model, filt)
    combine = combine_smoother_std if model.mode == "std" else combine_smoother_sqrt
    scanned = _scan.reverse_associative_scan_stacked(elems, combine)
    return GaussianSequence(scanned[1], scanned[2], model.mode)


def sequential_smoother(model: AffineModel, filt: GaussianSequence,
                        mode: str | None = None) -> GaussianSequence:
    """Classical RTS backward recursion (oracle for the parallel variant)."""
    model = _as_mode(model, mode)
    if filt.mode != model.mode:
        raise ValueError("filter result mode does not match the model")
    F, c, Q = model.F, model.c, model.Q
    n = model.n_steps
    ms = [filt.means[n]]
    Ws = [filt.covs[n]]
    try:
        for k in range(n - 1, -1, -1):
            mf, Wf = filt.means[k], filt.covs[k]
            mp = matvec(F[k], mf) + c[k]
            if model.mode == "std":
                Pp = F[k] @ Wf @ mT(F[k]) + Q[k]
                E = mT(dn.solve(mT(Pp), F[k] @ mT(Wf)))
                ms.append(mf + matvec(E, ms[-1] - mp))
                Ws.append(Wf + E @ (Ws[-1] - Pp) @ mT(E))
            else:
                nx = model.nx
                top = dn.concatenate([F[k] @ Wf, Q[k]], axis=-1)
                bot = dn.concatenate([Wf, _zeros((nx, nx), Q)], axis=-1)
                phi = tria(dn.concatenate([top, bot], axis=-2))
                E = rsolve_lower(phi[..., nx:, :nx], phi[..., :nx, :nx],
                                 context="predictive factor")
                ms.append(mf + matvec(E, ms[-1] - mp))
                Ws.append(tria(dn.concatenate([E @ Ws[-1], phi[..., nx:, nx:]], axis=-1)))
    except np.linalg.LinAlgError as e:
        raise SingularMatrixError(f"singular predictive covariance at step {k}: {e}") from e
    return GaussianSequence(dn.stack(ms[::-1], axis=0), dn.stack(Ws[::-1], axis=0), model.mode)


# ---------------------------------------------------------------------
# marginal log-likelihood
# ---------------------------------------------------------------------

def _loglik_terms(model: AffineModel, y, filt: GaussianSequence):
    F, c, Q, H, d, R = model.F, model.c, model.Q, model.H, model.d, model.R
    n = model.n_steps
    ny = model.ny
    mf, Wf = filt.means[:n], filt.covs[:n]
    mp = matvec(F, mf) + c
    if model.mode == "std":
        Pp = F @ Wf @ mT(F) + Q
        S = H @ Pp @ mT(H) + R
        try:
            Ys = dn.cholesky(S)
        except np.linalg.LinAlgError as e:
            raise SingularMatrixError(f"predictive covariance not positive definite: {e}") from e
    else:
        Np = tria(dn.concatenate([F @ Wf, Q], axis=-1))
        Ys = tria(dn.concatenate([H @ Np, R], axis=-1))
    r = y - matvec(H, mp) - d
    z = solve_lower(Ys, r[..., None], context="predictive factor")[..., 0]
    return (-0.5 * dn.asum(z * z, axis=-1)
            - dn.asum(dn.log(dn.diagonal(Ys)), axis=-1)
            - 0.5 * ny * _LOG_2PI)


def filter_log_likelihood(model: AffineModel, y, mode: str | None = None,
                          execution: str = "parallel"):
    """Marginal log-likelihood of y under the affine model.

    The per-step terms use the observation predictive moments derived from
    the filtering marginals; in parallel execution both the marginals and
    the final reduction go through the scan.
    """
    model = _as_mode(model, mode)
    if execution == "parallel":
        filt = parallel_filter(model, y)
    elif execution == "sequential":
        filt = sequential_filter(model, y)
    else:
        raise ValueError(f"unknown execution {execution!r}")
    terms = _loglik_terms(model, y, filt)
    if execution == "parallel":
        total = _scan.associative_scan_stacked((terms,), lambda a, b: (a[0] + b[0],))[0]
        return total[-1]
    acc = terms[0]
    for k in range(1, dn.val(terms).shape[0]):
        acc = acc + terms[k]
    return acc
