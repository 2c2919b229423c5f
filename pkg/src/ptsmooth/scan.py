"""Parallel prefix scans with a caller-supplied associative combine.

Two element layouts are supported:

* generic: a Python sequence of arbitrary elements, combined pairwise.
  Same-level combines are dispatched to the shared worker pool.
* stacked: a tuple of arrays whose leading axis indexes the elements
  (struct-of-sequences).  The combine then receives sliced stacks and is
  executed as a handful of vectorized calls, one per tree level.

Both layouts use the same balanced binary recursion, so the reassociation
pattern is fixed by the element count alone: results are bit-reproducible
for a given precision regardless of the worker count.  Work is at most 2n
combines; the span is O(log n) given enough workers.  Sequences shorter
than the configured fallback threshold run as a plain sequential fold.
"""

from __future__ import annotations

from typing import Callable, Sequence, TypeVar

from . import config
from . import duals as dn

E = TypeVar("E")

__all__ = [
    "sequential_fold", "associative_scan", "reverse_associative_scan",
    "sequential_fold_stacked", "associative_scan_stacked",
    "reverse_associative_scan_stacked",
]


# ---------------------------------------------------------------------
# generic (list) layout
# ---------------------------------------------------------------------

def sequential_fold(elems: Sequence[E], combine: Callable[[E, E], E]) -> list[E]:
    """Inclusive left-to-right fold: out[k] = e0 * e1 * ... * ek."""
    if len(elems) == 0:
        raise ValueError("scan requires at least one element")
    out = [elems[0]]
    for e in elems[1:]:
        out.append(combine(out[-1], e))
    return out


def _map_pairs(combine, left: list, right: list) -> list:
    if config.workers() > 1 and len(left) >= 32:
        return list(config.pool().map(combine, left, right))
    return [combine(a, b) for a, b in zip(left, right)]


def _scan_list(elems: list, combine) -> list:
    n = len(elems)
    if n < 2:
        return list(elems)
    reduced = _map_pairs(combine, elems[0:2 * (n // 2):2], elems[1::2])
    odd = _scan_list(reduced, combine)
    if n % 2 == 0:
        even_tail = _map_pairs(combine, odd[:-1], elems[2::2])
    else:
        even_tail = _map_pairs(combine, odd, elems[2::2])
    even = [elems[0]] + even_tail
    out = [None] * n
    out[0::2] = even
    out[1::2] = odd
    return out


def associative_scan(elems: Sequence[E], combine: Callable[[E, E], E]) -> list[E]:
    """All prefixes e0, e0*e1, ..., e0*...*e(n-1) of an associative combine.

    Falls back to the sequential fold below the configured element-count
    threshold, where combine cost dominates any parallel gain.
    """
    if len(elems) == 0:
        raise ValueError("scan requires at least one element")
    if len(elems) < config.scan_fallback():
        return sequential_fold(elems, combine)
    return _scan_list(list(elems), combine)


def reverse_associative_scan(elems: Sequence[E], combine: Callable[[E, E], E]) -> list[E]:
    """All suffixes: out[k] = e[k] * e[k+1] * ... * e[n-1].

    Realized as reverse, scan with flipped-argument combine, reverse.
    """
    flipped = lambda a, b: combine(b, a)
    return associative_scan(list(elems)[::-1], flipped)[::-1]


# ---------------------------------------------------------------------
# stacked (struct-of-sequences) layout
# ---------------------------------------------------------------------

def _slc(stacks: tuple, idx) -> tuple:
    return tuple(x[idx] for x in stacks)


def _stack_len(stacks: tuple) -> int:
    return dn.val(stacks[0]).shape[0]


def sequential_fold_stacked(stacks: tuple, combine) -> tuple:
    """Sequential inclusive fold over stacked elements (reference path)."""
    n = _stack_len(stacks)
    out = [_slc(stacks, slice(0, 1))]
    for k in range(1, n):
        out.append(combine(out[-1], _slc(stacks, slice(k, k + 1))))
    return tuple(dn.concatenate(parts, axis=0) for parts in zip(*out))


def _scan_stacked(stacks: tuple, combine) -> tuple:
    n = _stack_len(stacks)
    if n < 2:
        return stacks
    m = n // 2
    reduced = combine(_slc(stacks, slice(0, 2 * m, 2)), _slc(stacks, slice(1, None, 2)))
    odd = _scan_stacked(reduced, combine)
    first = _slc(stacks, slice(0, 1))
    if n == 2:
        even = first
    else:
        if n % 2 == 0:
            even_tail = combine(_slc(odd, slice(0, m - 1)), _slc(stacks, slice(2, None, 2)))
        else:
            even_tail = combine(odd, _slc(stacks, slice(2, None, 2)))
        even = tuple(dn.concatenate([f, e], axis=0) for f, e in zip(first, even_tail))
    return tuple(dn.interleave(ev, od) for ev, od in zip(even, odd))


def associative_scan_stacked(stacks: tuple, combine) -> tuple:
    """Inclusive scan over a tuple of element stacks (leading axis = step)."""
    n = _stack_len(stacks)
    if n == 0:
        raise ValueError("scan requires at least one element")
    if n < config.scan_fallback():
        return sequential_fold_stacked(stacks, combine)
    return _scan_stacked(stacks, combine)


def reverse_associative_scan_stacked(stacks: tuple, combine) -> tuple:
    flipped = lambda a, b: combine(b, a)
    rev = tuple(dn.flip0(x) for x in stacks)
    out = associative_scan_stacked(rev, flipped)
    return tuple(dn.flip0(x) for x in out)
