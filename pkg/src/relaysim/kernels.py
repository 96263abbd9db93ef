"""Numeric kernels for the assignment solvers, with two exact twins.

The hot paths (brute-force enumeration of every requester->relay
assignment, and the greedy sweep) exist twice: a numba-jitted loop and a
vectorized/pure-numpy fallback. Both produce bit-identical results,
including tie-breaking, so the choice of backend never changes a
simulation. Numba is used when it imports cleanly; set RELAYSIM_NUMBA=0
to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

CAP_EPS = 1e-9

_flag = os.environ.get("RELAYSIM_NUMBA", "1").strip().lower()
_want_numba = _flag not in ("0", "false", "no", "off")

NUMBA_AVAILABLE = False
if _want_numba:
    try:
        from numba import njit
        NUMBA_AVAILABLE = True
    except ImportError:
        NUMBA_AVAILABLE = False


def backend() -> str:
    """Name of the active backend: 'numba' or 'numpy'."""
    return "numba" if NUMBA_AVAILABLE else "numpy"


# Assignments are encoded as integers k in [0, m**n): requester q is
# assigned relay (k // m**q) % m. Ties on the objective keep the smallest
# k, which both backends implement as strict-improvement updates in
# ascending k order.

def _exact_loop(b, caps):
    n, m = b.shape
    total = 1
    for _ in range(n):
        total *= m
    best_k = -1
    best_obj = 0.0
    loads = np.empty(m, dtype=np.float64)
    for k in range(total):
        kk = k
        obj = 0.0
        for r in range(m):
            loads[r] = 0.0
        feasible = True
        for q in range(n):
            r = kk % m
            kk //= m
            loads[r] += b[q, r]
            obj += b[q, r]
        for r in range(m):
            if loads[r] > caps[r] + CAP_EPS:
                feasible = False
                break
        if feasible and (best_k < 0 or obj > best_obj):
            best_k = k
            best_obj = obj
    return best_k, best_obj


def exact_best_numpy(b: np.ndarray, caps: np.ndarray, chunk: int = 1 << 15):
    """Vectorized enumeration twin of the jitted loop.

    Scans assignment codes in chunks; within a chunk np.argmax returns the
    first maximum and across chunks only strict improvements are kept, so
    the smallest winning code is preserved exactly as in the loop version.
    """
    n, m = b.shape
    if n == 0:
        return 0, 0.0
    total = m ** n
    powers = m ** np.arange(n, dtype=np.int64)
    rows = np.arange(n)
    best_k = -1
    best_obj = 0.0
    for start in range(0, total, chunk):
        ks = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (ks[:, None] // powers[None, :]) % m
        chosen = b[rows[None, :], digits]
        obj = chosen.sum(axis=1)
        feasible = np.ones(len(ks), dtype=bool)
        for r in range(m):
            load = np.where(digits == r, chosen, 0.0).sum(axis=1)
            feasible &= load <= caps[r] + CAP_EPS
        if not feasible.any():
            continue
        masked = np.where(feasible, obj, -np.inf)
        i = int(np.argmax(masked))
        if best_k < 0 or masked[i] > best_obj:
            best_k = start + i
            best_obj = float(masked[i])
    return best_k, best_obj


def _greedy_loop(flat_order, b, assign, remaining):
    m = b.shape[1]
    for idx in flat_order:
        q = idx // m
        r = idx % m
        if assign[q] >= 0:
            continue
        if b[q, r] <= remaining[r] + CAP_EPS:
            assign[q] = r
            remaining[r] -= b[q, r]


def _greedy_loop_numpy(flat_order, b, assign, remaining):
    m = b.shape[1]
    for idx in flat_order:
        q = idx // m
        r = idx % m
        if assign[q] >= 0:
            continue
        if b[q, r] <= remaining[r] + CAP_EPS:
            assign[q] = r
            remaining[r] -= b[q, r]


if NUMBA_AVAILABLE:
    exact_best_numba = njit(cache=True)(_exact_loop)
    _greedy_numba = njit(cache=True)(_greedy_loop)
else:
    exact_best_numba = None
    _greedy_numba = None


def exact_best(b: np.ndarray, caps: np.ndarray) -> tuple[int, float]:
    """Best feasible assignment code and objective; code -1 if infeasible."""
    b = np.ascontiguousarray(b, dtype=np.float64)
    caps = np.ascontiguousarray(caps, dtype=np.float64)
    if b.shape[0] == 0:
        return 0, 0.0
    if NUMBA_AVAILABLE:
        k, obj = exact_best_numba(b, caps)
    else:
        k, obj = exact_best_numpy(b, caps)
    return int(k), float(obj)


def decode_assignment(k: int, n: int, m: int) -> tuple[int, ...]:
    """Expand an assignment code into per-requester relay indices."""
    out = []
    for _ in range(n):
        out.append(k % m)
        k //= m
    return tuple(out)


def greedy_assign(b: np.ndarray, caps: np.ndarray) -> tuple[np.ndarray, float]:
    """One-pass greedy: visit benefits in descending order, assign when it fits.

    Ties in benefit are broken by flat index (requester-major), giving both
    backends the same deterministic order. Returns (assignment, objective)
    where unmatched requesters hold -1.
    """
    b = np.ascontiguousarray(b, dtype=np.float64)
    caps = np.ascontiguousarray(caps, dtype=np.float64)
    n, m = b.shape
    assign = np.full(n, -1, dtype=np.int64)
    if n == 0 or m == 0:
        return assign, 0.0
    flat_order = np.argsort(-b.ravel(), kind="stable")
    remaining = caps.copy()
    if NUMBA_AVAILABLE:
        _greedy_numba(flat_order, b, assign, remaining)
    else:
        _greedy_loop_numpy(flat_order, b, assign, remaining)
    obj = 0.0
    for q in range(n):
        if assign[q] >= 0:
            obj += b[q, assign[q]]
    return assign, float(obj)
