"""Forward-mode tangent arrays and the array-math facade built on them.

A :class:`Dual` pairs a value array with a tangent array of the same shape
and propagates directional derivatives through arithmetic.  The helper
functions in this module (``matmul`` via ``@``, :func:`concatenate`,
:func:`exp`, :func:`solve`, ...) accept either plain ndarrays or Duals, so
the filtering/smoothing numerics are written once and evaluated either
plainly or as a Jacobian-vector product.  Only one tangent direction is
carried at a time; full Jacobians are never materialized.

Plain inputs take a fast path that goes straight to numpy.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Dual", "is_dual", "val", "dot", "lift",
    "mT", "matvec", "concatenate", "stack", "where", "asum",
    "sqrt", "exp", "log", "sin", "cos", "arctan2", "tril",
    "solve", "cholesky", "interleave", "flip0",
]


class Dual:
    """Value/tangent pair for first-order forward-mode differentiation."""

    __slots__ = ("val", "dot")
    # Keep numpy from broadcasting Duals elementwise as objects; binary ops
    # with ndarrays then dispatch to the reflected methods below.
    __array_ufunc__ = None

    def __init__(self, value, tangent):
        value = np.asarray(value)
        tangent = np.asarray(tangent, dtype=value.dtype)
        if tangent.shape != value.shape:
            tangent = np.broadcast_to(tangent, value.shape)
        self.val = value
        self.dot = tangent

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    @property
    def dtype(self):
        return self.val.dtype

    @property
    def mT(self):
        return Dual(_swap(self.val), _swap(self.dot))

    def __len__(self):
        return len(self.val)

    def __repr__(self):
        return f"Dual(val={self.val!r}, dot={self.dot!r})"

    def __getitem__(self, idx):
        return Dual(self.val[idx], self.dot[idx])

    def reshape(self, *shape):
        return Dual(self.val.reshape(*shape), self.dot.reshape(*shape))

    # -- arithmetic ----------------------------------------------------
    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __add__(self, other):
        ov, od = val(other), dot(other)
        v = self.val + ov
        return Dual(v, _bcast(self.dot, v) + _bcast(od, v))

    __radd__ = __add__

    def __sub__(self, other):
        ov, od = val(other), dot(other)
        v = self.val - ov
        return Dual(v, _bcast(self.dot, v) - _bcast(od, v))

    def __rsub__(self, other):
        ov, od = val(other), dot(other)
        v = ov - self.val
        return Dual(v, _bcast(od, v) - _bcast(self.dot, v))

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val,
                        self.dot * other.val + self.val * other.dot)
        return Dual(self.val * other, self.dot * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            v = self.val / other.val
            return Dual(v, (self.dot - v * other.dot) / other.val)
        return Dual(self.val / other, self.dot / other)

    def __rtruediv__(self, other):
        v = other / self.val
        return Dual(v, -v * self.dot / self.val)

    def __matmul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val @ other.val,
                        self.dot @ other.val + self.val @ other.dot)
        return Dual(self.val @ other, self.dot @ other)

    def __rmatmul__(self, other):
        return Dual(other @ self.val, other @ self.dot)


def is_dual(x) -> bool:
    return isinstance(x, Dual)


def val(x):
    """Value part (identity on plain arrays/scalars)."""
    return x.val if isinstance(x, Dual) else x


def dot(x):
    """Tangent part (zero for plain arrays/scalars)."""
    return x.dot if isinstance(x, Dual) else np.zeros_like(np.asarray(x))


def lift(x):
    """Wrap a plain array as a Dual with zero tangent (no-op on Duals)."""
    if isinstance(x, Dual):
        return x
    x = np.asarray(x)
    return Dual(x, np.zeros_like(x))


def _bcast(t, v):
    return t if t.shape == v.shape else np.broadcast_to(t, v.shape)


def _swap(a):
    return np.swapaxes(a, -1, -2)


# ---------------------------------------------------------------------
# facade functions: ndarray in -> ndarray out, Dual in -> Dual out
# ---------------------------------------------------------------------

def mT(x):
    """Transpose of the trailing two axes."""
    return x.mT if isinstance(x, Dual) else _swap(x)


def swapaxes(x, a, b):
    if isinstance(x, Dual):
        return Dual(np.swapaxes(x.val, a, b), np.swapaxes(x.dot, a, b))
    return np.swapaxes(x, a, b)


def matvec(a, v):
    """Batched matrix-vector product: (..., m, n) @ (..., n) -> (..., m)."""
    return (a @ v[..., None])[..., 0]


def concatenate(xs, axis=0):
    if any(isinstance(x, Dual) for x in xs):
        xs = [lift(x) for x in xs]
        return Dual(np.concatenate([x.val for x in xs], axis=axis),
                    np.concatenate([x.dot for x in xs], axis=axis))
    return np.concatenate(xs, axis=axis)


def stack(xs, axis=0):
    if any(isinstance(x, Dual) for x in xs):
        xs = [lift(x) for x in xs]
        return Dual(np.stack([x.val for x in xs], axis=axis),
                    np.stack([x.dot for x in xs], axis=axis))
    return np.stack(xs, axis=axis)


def where(cond, a, b):
    """Elementwise select; the condition is evaluated on values only."""
    cond = val(cond)
    if isinstance(a, Dual) or isinstance(b, Dual):
        return Dual(np.where(cond, val(a), val(b)),
                    np.where(cond, dot(a), dot(b)))
    return np.where(cond, a, b)


def asum(x, axis=None, keepdims=False):
    if isinstance(x, Dual):
        return Dual(np.sum(x.val, axis=axis, keepdims=keepdims),
                    np.sum(x.dot, axis=axis, keepdims=keepdims))
    return np.sum(x, axis=axis, keepdims=keepdims)


def sqrt(x):
    if isinstance(x, Dual):
        v = np.sqrt(x.val)
        return Dual(v, x.dot / (2.0 * v))
    return np.sqrt(x)


def exp(x):
    if isinstance(x, Dual):
        v = np.exp(x.val)
        return Dual(v, v * x.dot)
    return np.exp(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(np.log(x.val), x.dot / x.val)
    return np.log(x)


def sin(x):
    if isinstance(x, Dual):
        return Dual(np.sin(x.val), np.cos(x.val) * x.dot)
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(np.cos(x.val), -np.sin(x.val) * x.dot)
    return np.cos(x)


def arctan2(y, x):
    if isinstance(y, Dual) or isinstance(x, Dual):
        yv, xv = val(y), val(x)
        denom = xv * xv + yv * yv
        return Dual(np.arctan2(yv, xv),
                    (xv * dot(y) - yv * dot(x)) / denom)
    return np.arctan2(y, x)


def tril(x, k=0):
    if isinstance(x, Dual):
        return Dual(np.tril(x.val, k), np.tril(x.dot, k))
    return np.tril(x, k)


def diagonal(x):
    """Diagonals of the trailing two axes."""
    if isinstance(x, Dual):
        return Dual(np.diagonal(x.val, axis1=-2, axis2=-1),
                    np.diagonal(x.dot, axis1=-2, axis2=-1))
    return np.diagonal(x, axis1=-2, axis2=-1)


def solve(a, b):
    """Linear solve a @ x = b with LU; JVP: dx = a^-1 (db - da @ x)."""
    if isinstance(a, Dual) or isinstance(b, Dual):
        x = np.linalg.solve(val(a), val(b))
        rhs = dot(b) - dot(a) @ x if isinstance(a, Dual) else dot(b)
        return Dual(x, np.linalg.solve(val(a), rhs))
    return np.linalg.solve(a, b)


def _phi_mask(n, dt):
    # lower-triangular ones with halved diagonal, used by factor JVPs
    m = np.tril(np.ones((n, n), dtype=dt))
    np.fill_diagonal(m, 0.5)
    return m


def chol_jvp(L, dA):
    """Tangent of a lower Cholesky factor L of A given the tangent of A."""
    # dL = L Phi(L^-1 dA L^-T) with Phi = tril with halved diagonal
    n = L.shape[-1]
    x = np.linalg.solve(L, dA)
    x = np.linalg.solve(L, _swap(x))  # (L^-1 (L^-1 dA)^T) = (L^-1 dA L^-T)^T
    return L @ (_phi_mask(n, L.dtype) * _swap(x))


def cholesky(a):
    """Lower Cholesky factor; differentiable for positive definite input."""
    if isinstance(a, Dual):
        L = np.linalg.cholesky(a.val)
        return Dual(L, chol_jvp(L, a.dot))
    return np.linalg.cholesky(a)


def interleave(a, b, out_len=None):
    """Merge a and b along axis 0 as a0, b0, a1, b1, ...

    len(a) is len(b) or len(b) + 1; trailing shapes must match.
    """
    if isinstance(a, Dual) or isinstance(b, Dual):
        a, b = lift(a), lift(b)
        return Dual(interleave(a.val, b.val), interleave(a.dot, b.dot))
    n = len(a) + len(b)
    out = np.empty((n,) + a.shape[1:], dtype=a.dtype)
    out[0::2] = a
    out[1::2] = b
    return out


def flip0(x):
    """Reverse along axis 0."""
    if isinstance(x, Dual):
        return Dual(x.val[::-1], x.dot[::-1])
    return x[::-1]
