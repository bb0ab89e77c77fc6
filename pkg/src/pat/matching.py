"""Minimum-cost bipartite matching via the potentials/augmenting-path
Hungarian algorithm, O(n^3).

Rectangular matrices are supported: all rows of the smaller side are
matched. Used to pair predicted queries with ground-truth masks for the
segmentation loss.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["MatchResult", "hungarian"]


@dataclass
class MatchResult:
    """One-to-one assignment: pairs maps row index -> column index."""

    pairs: dict
    total_cost: float


def hungarian(cost):
    """Minimum-cost assignment of min(R, C) row/column pairs.

    Raises ValueError on non-finite entries.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be rank 2, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    if cost.size == 0:
        return MatchResult({}, 0.0)

    transposed = cost.shape[0] > cost.shape[1]
    c = cost.T if transposed else cost
    n, m = c.shape  # n <= m; every row gets matched

    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)   # p[j]: row matched to column j (1-based)
    way = np.zeros(m + 1, dtype=np.int64)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = -1
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = c[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    pairs = {}
    for j in range(1, m + 1):
        if p[j]:
            row, col = int(p[j] - 1), j - 1
            if transposed:
                row, col = col, row
            pairs[row] = col
    total = float(sum(cost[r, cc] for r, cc in pairs.items()))
    return MatchResult(pairs, total)
