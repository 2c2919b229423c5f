"""Matrix square-root primitives: QR triangularization, Cholesky rank-k
downdate, and triangular solves.

Everything here operates on lower-triangular Cholesky factors and accepts
arbitrary leading batch dimensions, so per-step quantities of a whole
trajectory are processed in one call.  All routines are pure functions and
safe to call concurrently.  Inputs may be plain arrays or forward-mode
:class:`~ptsmooth.duals.Dual` arrays; tangent rules are supplied where the
underlying factorization is not written in terms of facade arithmetic.
"""

from __future__ import annotations

import numpy as np

from . import config
from . import duals as dn
from .duals import Dual
from .errors import IndefiniteDowndateError, SingularMatrixError

__all__ = [
    "tria", "cholesky_downdate", "solve_lower", "solve_upper_transpose",
    "rsolve_lower", "rsolve_lower_t", "clip_psd", "chol_psd",
]


def _tria_plain(m: np.ndarray) -> np.ndarray:
    rows = m.shape[-2]
    cols = m.shape[-1]
    if cols == 0:
        return np.zeros(m.shape[:-1] + (rows,), dtype=m.dtype)
    if cols < rows:
        # treat missing columns as zeros so the output is always square
        pad = np.zeros(m.shape[:-1] + (rows - cols,), dtype=m.dtype)
        m = np.concatenate([m, pad], axis=-1)
    r = np.linalg.qr(np.swapaxes(m, -1, -2), mode="r")
    out = np.swapaxes(r, -1, -2)
    # normalize so the diagonal is nonnegative (QR fixes signs arbitrarily)
    d = np.diagonal(out, axis1=-2, axis2=-1)
    signs = np.where(d < 0, -1.0, 1.0).astype(m.dtype)
    return out * signs[..., None, :]


def tria(m):
    """Triangularize: lower-triangular T with T @ T.T == m @ m.T.

    Accepts (..., n, k) with any k >= 0; the result is (..., n, n) with a
    nonnegative diagonal and exactly zero strict upper triangle.  For a
    block row [A B] the output therefore carries A @ A.T + B @ B.T in
    factored form.
    """
    if isinstance(m, Dual):
        t = _tria_plain(m.val)
        # T T^T = M M^T, so the factor tangent is the Cholesky tangent of
        # d(M M^T); valid when M M^T is positive definite.
        da = m.dot @ np.swapaxes(m.val, -1, -2)
        da = da + np.swapaxes(da, -1, -2)
        return Dual(t, dn.chol_jvp(t, da))
    return _tria_plain(np.asarray(m))


def _downdate_plain(L: np.ndarray, W: np.ndarray) -> np.ndarray:
    n = L.shape[-1]
    out = np.array(L, copy=True)
    w = np.array(W, copy=True)
    for col in range(w.shape[-1]):
        for j in range(n):
            ljj = out[..., j, j]
            wj = w[..., j, col]
            r2 = ljj * ljj - wj * wj
            if np.any(r2 <= 0.0) or not np.all(np.isfinite(r2)):
                raise IndefiniteDowndateError(column=col)
            r = np.sqrt(r2)
            c = r / ljj
            s = wj / ljj
            out[..., j, j] = r
            if j + 1 < n:
                tail = (out[..., j + 1:, j] - s[..., None] * w[..., j + 1:, col]) / c[..., None]
                out[..., j + 1:, j] = tail
                w[..., j + 1:, col] = c[..., None] * w[..., j + 1:, col] - s[..., None] * tail
    return out


def cholesky_downdate(L, W):
    """Factor of L @ L.T - W @ W.T via successive rank-1 downdates.

    L is lower triangular (..., n, n) and W is (..., n, k); the downdate is
    applied column by column.  Raises IndefiniteDowndateError as soon as a
    pivot becomes nonpositive, i.e. when the difference is not positive
    definite to working precision.  No regularization is applied.
    """
    if isinstance(L, Dual) or isinstance(W, Dual):
        s = _downdate_plain(dn.val(L), dn.val(W))
        lv, wv = dn.val(L), dn.val(W)
        da = dn.dot(L) @ np.swapaxes(lv, -1, -2) - dn.dot(W) @ np.swapaxes(wv, -1, -2)
        da = da + np.swapaxes(da, -1, -2)
        return Dual(s, dn.chol_jvp(s, da))
    return _downdate_plain(np.asarray(L), np.asarray(W))


def _check_diag(L, context: str):
    d = np.abs(np.diagonal(dn.val(L), axis1=-2, axis2=-1))
    if d.size == 0:
        raise SingularMatrixError(f"singular diagonal in {context}")
    dmax = np.max(d, axis=-1, keepdims=True)
    tol = config.solve_rtol() * config.eps(dn.val(L).dtype) * dmax
    if np.any(dmax == 0.0) or np.any(d <= tol) or not np.all(np.isfinite(d)):
        raise SingularMatrixError(f"singular diagonal in {context}")


def solve_lower(L, B, context: str = "triangular solve"):
    """Forward substitution: X with L @ X = B for lower-triangular L.

    Shapes (..., n, n) and (..., n, m).  Raises SingularMatrixError when a
    diagonal entry is below the configured tolerance.
    """
    _check_diag(L, context)
    n = dn.val(L).shape[-1]
    rows = []
    solved = None
    for i in range(n):
        rhs = B[..., i:i + 1, :]
        if i:
            rhs = rhs - L[..., i:i + 1, :i] @ solved
        rows.append(rhs / L[..., i:i + 1, i:i + 1])
        solved = dn.concatenate(rows, axis=-2)
    return solved


def solve_upper_transpose(L, B, context: str = "triangular solve"):
    """Back substitution: X with L.T @ X = B for lower-triangular L."""
    _check_diag(L, context)
    n = dn.val(L).shape[-1]
    rows = [None] * n
    solved = None
    for i in range(n - 1, -1, -1):
        rhs = B[..., i:i + 1, :]
        if i < n - 1:
            rhs = rhs - dn.mT(L[..., i + 1:, i:i + 1]) @ solved
        rows[i] = rhs / L[..., i:i + 1, i:i + 1]
        solved = dn.concatenate(rows[i:], axis=-2)
    return solved


def rsolve_lower(B, L, context: str = "triangular solve"):
    """Right solve B @ L^-1 for lower-triangular L."""
    return dn.mT(solve_upper_transpose(L, dn.mT(B), context))


def rsolve_lower_t(B, L, context: str = "triangular solve"):
    """Right solve B @ L^-T for lower-triangular L."""
    return dn.mT(solve_lower(L, dn.mT(B), context))


def clip_psd(a):
    """Symmetrize and clip negative eigenvalues at zero.

    Returns (matrix, number of clipped matrices in the batch).  Exact
    pass-through (no reconstruction) when nothing needs clipping.
    """
    if isinstance(a, Dual):
        sym = (a + a.mT) * 0.5
        w = np.linalg.eigvalsh(sym.val)
        bad = np.any(w < 0.0, axis=-1)
        nbad = int(np.count_nonzero(bad))
        if nbad == 0:
            return sym, 0
        # clip values; propagate tangents with eigenvectors held fixed
        w2, v = np.linalg.eigh(sym.val)
        keep = (w2 > 0.0).astype(sym.val.dtype)
        vt = np.swapaxes(v, -1, -2)
        new_val = (v * (np.maximum(w2, 0.0)[..., None, :])) @ vt
        mask = keep[..., :, None] * keep[..., None, :]
        new_dot = v @ (mask * (vt @ sym.dot @ v)) @ vt
        sel = bad[..., None, None]
        return Dual(np.where(sel, new_val, sym.val),
                    np.where(sel, new_dot, sym.dot)), nbad
    sym = (a + np.swapaxes(a, -1, -2)) * 0.5
    w = np.linalg.eigvalsh(sym)
    bad = np.any(w < 0.0, axis=-1)
    nbad = int(np.count_nonzero(bad))
    if nbad == 0:
        return sym, 0
    w2, v = np.linalg.eigh(sym)
    new = (v * np.maximum(w2, 0.0)[..., None, :]) @ np.swapaxes(v, -1, -2)
    out = np.where(bad[..., None, None], new, sym)
    return out, nbad


def chol_psd(a):
    """Lower factor of a symmetric positive *semi*definite matrix.

    Plain Cholesky with an eigendecomposition fallback for semidefinite
    inputs (e.g. exactly zero prior covariances).
    """
    a = np.asarray(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh((a + np.swapaxes(a, -1, -2)) * 0.5)
        w = np.maximum(w, 0.0)
        return _tria_plain(v * np.sqrt(w)[..., None, :])
