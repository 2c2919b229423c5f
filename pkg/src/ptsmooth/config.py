"""Global run-mode configuration.

Floating-point precision (32- or 64-bit), the worker pool size, and the
scan fallback threshold are process-wide settings chosen once per run
rather than per call.  Changing the precision affects arrays built after
the change (model construction, simulation, CLI entry points); algorithm
internals inherit the dtype of their operands, so a whole pipeline runs
uniformly in the selected precision.
"""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np

_DTYPES = {32: np.float32, 64: np.float64}


class _RunMode:
    def __init__(self) -> None:
        self.precision_bits = 64
        self.num_workers = os.cpu_count() or 1
        self.scan_fallback = 32
        # |diag| entries below solve_rtol * eps * max|diag| count as singular
        self.solve_rtol = 1e3


_mode = _RunMode()
_pool: ThreadPoolExecutor | None = None
_pool_workers = 0
_pool_lock = threading.Lock()


def set_precision(bits: int) -> None:
    """Select the working precision for subsequently built arrays (32 or 64)."""
    if bits not in _DTYPES:
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    _mode.precision_bits = bits


def precision_bits() -> int:
    return _mode.precision_bits


def dtype() -> np.dtype:
    """Active floating dtype."""
    return np.dtype(_DTYPES[_mode.precision_bits])


def eps(dt=None) -> float:
    """Unit roundoff of the active (or given) precision."""
    return float(np.finfo(dt if dt is not None else dtype()).eps)


def asarray(x) -> np.ndarray:
    """Convert to an array in the active precision."""
    return np.asarray(x, dtype=dtype())


def set_workers(n: int) -> None:
    """Resize the shared worker pool used for same-level scan combines."""
    if n < 1:
        raise ValueError("worker count must be >= 1")
    _mode.num_workers = int(n)


def workers() -> int:
    return _mode.num_workers


def set_scan_fallback(n: int) -> None:
    """Element count below which parallel scans run as a sequential fold."""
    if n < 1:
        raise ValueError("scan fallback threshold must be >= 1")
    _mode.scan_fallback = int(n)


def scan_fallback() -> int:
    return _mode.scan_fallback


def solve_rtol() -> float:
    return _mode.solve_rtol


def set_solve_rtol(r: float) -> None:
    _mode.solve_rtol = float(r)


def pool() -> ThreadPoolExecutor:
    """Shared thread pool, lazily created and resized with set_workers."""
    global _pool, _pool_workers
    with _pool_lock:
        if _pool is None or _pool_workers != _mode.num_workers:
            if _pool is not None:
                _pool.shutdown(wait=False)
            _pool = ThreadPoolExecutor(max_workers=_mode.num_workers)
            _pool_workers = _mode.num_workers
        return _pool


@contextmanager
def precision(bits: int):
    """Temporarily switch working precision (mainly for tests)."""
    old = _mode.precision_bits
    set_precision(bits)
    try:
        yield
    finally:
        _mode.precision_bits = old


@contextmanager
def worker_count(n: int):
    """Temporarily resize the worker pool."""
    old = _mode.num_workers
    set_workers(n)
    try:
        yield
    finally:
        _mode.num_workers = old
