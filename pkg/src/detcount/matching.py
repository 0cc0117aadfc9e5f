"""Minimum-cost bipartite point matching gated by a distance threshold.

The assignment step solves the classic minimum-cost bipartite problem with
two extra guarantees needed by the reward path:

* cells marked forbidden (distance beyond the threshold) are chosen only
  when no feasible alternative exists, so the number of valid matches is
  maximal among minimum-cost assignments;
* ties between equal-cost assignments are broken toward the lowest
  (row, col) lexicographic pair list, which makes results deterministic.

Both are obtained by solving over composite costs (float cost, integer
tie weight) with exact integer arithmetic for the tie component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FORBIDDEN = math.inf


@dataclass(frozen=True)
class CostMatrix:
    """Rectangular cost matrix; math.inf marks forbidden cells."""

    cost: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.cost, dtype=float)
        if arr.ndim != 2:
            raise ValueError("cost matrix must be 2-dimensional")
        finite = arr[np.isfinite(arr)]
        if np.any(np.isnan(arr)) or (finite.size and finite.min() < 0):
            raise ValueError("non-forbidden costs must be finite and >= 0")
        object.__setattr__(self, "cost", arr)

    @property
    def rows(self) -> int:
        return self.cost.shape[0]

    @property
    def cols(self) -> int:
        return self.cost.shape[1]


@dataclass(frozen=True)
class MatchResult:
    """Assignment pairs (pred index, gt index) and the count within threshold."""

    pairs: tuple[tuple[int, int], ...]
    n_valid: int


def _solve_square(cost_f: list[list[float]], tie: list[list[int]], n: int) -> list[int]:
    """Shortest-augmenting-path assignment over (float, int) composite costs.

    Returns col_of_row. Exact lexicographic comparison on the composite keeps
    the tie weights from ever being swamped by float rounding.
    """
    INF_F = math.inf
    u_f = [0.0] * (n + 1)
    u_t = [0] * (n + 1)
    v_f = [0.0] * (n + 1)
    v_t = [0] * (n + 1)
    p = [0] * (n + 1)  # p[j] = row matched to column j (1-based, 0 = none)
    way = [0] * (n + 1)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv_f = [INF_F] * (n + 1)
        minv_t = [0] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta_f = INF_F
            delta_t = 0
            j1 = 0
            row_f = cost_f[i0 - 1]
            row_t = tie[i0 - 1]
            ui_f = u_f[i0]
            ui_t = u_t[i0]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur_f = row_f[j - 1] - ui_f - v_f[j]
                cur_t = row_t[j - 1] - ui_t - v_t[j]
                if cur_f < minv_f[j] or (cur_f == minv_f[j] and cur_t < minv_t[j]):
                    minv_f[j] = cur_f
                    minv_t[j] = cur_t
                    way[j] = j0
                if minv_f[j] < delta_f or (minv_f[j] == delta_f and minv_t[j] < delta_t):
                    delta_f = minv_f[j]
                    delta_t = minv_t[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u_f[p[j]] += delta_f
                    u_t[p[j]] += delta_t
                    v_f[j] -= delta_f
                    v_t[j] -= delta_t
                else:
                    minv_f[j] -= delta_f
                    minv_t[j] -= delta_t
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    col_of_row = [0] * n
    for j in range(1, n + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row


def hungarian_min_cost(matrix: CostMatrix | np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost assignment of size min(rows, cols), sorted by row.

    Forbidden cells participate only when no assignment of that size can
    avoid them; equal-cost solutions resolve to the lexicographically
    smallest pair list. An empty matrix yields an empty assignment.
    """
    if not isinstance(matrix, CostMatrix):
        matrix = CostMatrix(np.asarray(matrix, dtype=float))
    rows, cols = matrix.rows, matrix.cols
    if rows == 0 or cols == 0:
        return []

    n = max(rows, cols)
    arr = matrix.cost
    finite_sum = float(arr[np.isfinite(arr)].sum()) if np.isfinite(arr).any() else 0.0
    big = finite_sum + 1.0

    # Square padding at zero cost; pads absorb the surplus side so every
    # solution keeps exactly min(rows, cols) real pairs.
    cost_f = [[0.0] * n for _ in range(n)]
    for i in range(rows):
        src = arr[i]
        dst = cost_f[i]
        for j in range(cols):
            v = src[j]
            dst[j] = big if v == FORBIDDEN else float(v)

    # Row-major positional weights: row 0 outweighs all later rows, so the
    # unique (cost, tie) optimum is the lexicographically smallest pair list.
    base = n + 1
    pows = [1] * n
    for k in range(1, n):
        pows[k] = pows[k - 1] * base
    tie = [[j * pows[n - 1 - i] for j in range(n)] for i in range(n)]

    col_of_row = _solve_square(cost_f, tie, n)
    return sorted((i, j) for i, j in enumerate(col_of_row) if i < rows and j < cols)


def match_points(
    pred: list[tuple[float, float]],
    gt: list[tuple[float, float]],
    threshold: float,
) -> MatchResult:
    """Assign predicted keypoints to ground-truth points within a pixel radius.

    Distances beyond the threshold are forbidden in the assignment, so valid
    pairings are never sacrificed to lower the global cost. n_valid counts
    only pairs within the threshold; pairs the solver was forced to make
    beyond it remain listed but do not count.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if not pred or not gt:
        return MatchResult(pairs=(), n_valid=0)
    p = np.asarray(pred, dtype=float).reshape(len(pred), 2)
    g = np.asarray(gt, dtype=float).reshape(len(gt), 2)
    dists = np.sqrt(((p[:, None, :] - g[None, :, :]) ** 2).sum(axis=2))
    cost = np.where(dists <= threshold, dists, FORBIDDEN)
    pairs = hungarian_min_cost(CostMatrix(cost))
    n_valid = sum(1 for i, j in pairs if dists[i, j] <= threshold)
    return MatchResult(pairs=tuple(pairs), n_valid=n_valid)
