"""Independent brute-force oracles used by the test suite.

These deliberately avoid the library's solution paths: expected values are
computed by enumeration, grids, or finite differences, so that a test
failure points at the implementation rather than at a shared helper.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np


def simplex_grid(n: int, step: float):
    """Yield every weight vector on the n-simplex whose entries are multiples of step."""
    k = int(round(1.0 / step))

    def rec(prefix, remaining, slots):
        if slots == 1:
            yield prefix + [remaining]
            return
        for units in range(remaining + 1):
            yield from rec(prefix + [units], remaining - units, slots - 1)

    for units in rec([], k, n):
        yield np.array(units, dtype=float) * step


def grid_min_simplex(Q: np.ndarray, c: np.ndarray, step: float,
                     upper: np.ndarray | None = None) -> float:
    """Brute-force min of x'Qx + c'x over the simplex grid, optional per-coordinate caps."""
    best = np.inf
    for w in simplex_grid(len(c), step):
        if upper is not None and np.any(w > upper + 1e-12):
            continue
        val = float(w @ Q @ w + c @ w)
        if val < best:
            best = val
    return best


def markowitz_grid_2simplex(omega_diag, alpha, lam, step):
    """Chunked 2-simplex grid for 3-asset diagonal-covariance instances."""
    o1, o2, o3 = omega_diag
    a1, a2, a3 = alpha
    grid = np.arange(0.0, 1.0 + step / 2, step)
    best = np.inf
    arg = None
    for w1 in grid:
        w2 = grid[grid <= 1.0 - w1 + 1e-12]
        w3 = 1.0 - w1 - w2
        obj = (o1 * w1 * w1 + o2 * w2 * w2 + o3 * w3 * w3
               - lam * (a1 * w1 + a2 * w2 + a3 * w3))
        i = int(np.argmin(obj))
        if obj[i] < best:
            best = float(obj[i])
            arg = (float(w1), float(w2[i]), float(w3[i]))
    return best, arg


def central_difference(f, x0: float, eps: float) -> float:
    return (f(x0 + eps) - f(x0 - eps)) / (2.0 * eps)


def subsets_in_band(items, k_min: int, k_max: int):
    for k in range(k_min, k_max + 1):
        yield from combinations(items, k)


def spearman_rho(a, b) -> float:
    """Spearman rank correlation, average ranks for ties."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)

    def ranks(v):
        order = np.argsort(v, kind="mergesort")
        r = np.empty_like(v)
        r[order] = np.arange(len(v), dtype=float)
        # average tied ranks
        vals, inv, counts = np.unique(v, return_inverse=True, return_counts=True)
        sums = np.zeros(len(vals))
        np.add.at(sums, inv, r)
        return sums[inv] / counts[inv]

    ra, rb = ranks(a), ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra @ ra) * (rb @ rb))
    return float(ra @ rb / denom) if denom > 0 else 1.0
