"""Optimal assignment, OSPA, and time-averaged OSPA track distances.

The set metric follows the standard optimal sub-pattern assignment construction:
for point sets X (size m) and Y (size n) with m <= n,

    d(X, Y) = ( (1/n) * ( min_pi sum_i d_c(x_i, y_pi(i))^p + c^p (n - m) ) )^(1/p)

with base distances truncated at the cut-off c, d(empty, empty) = 0, and d = c
when exactly one set is empty. The track-to-track distance averages the
per-step singleton OSPA (which reduces to the truncated base distance, hence
order 1) over the union of the two existence domains; steps where only one
track exists contribute the full cut-off c.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .scenario import MatchingParams, Track


def base_distance_matrix(X: np.ndarray, Y: np.ndarray, base: str) -> np.ndarray:
    """Pairwise base distances between rows of X (m, d) and Y (n, d)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    diff = X[:, None, :] - Y[None, :, :]
    if base == "manhattan":
        return np.abs(diff).sum(axis=2)
    if base == "euclidean":
        return np.sqrt((diff**2).sum(axis=2))
    raise ValueError(f"unknown base distance {base!r}")


def assign(cost: np.ndarray) -> tuple[dict[int, int], float]:
    """Minimum-cost one-to-one assignment of the smaller side into the larger.

    Returns the row -> column map and the total assigned cost. Exactly optimal
    (Jonker-Volgenant via scipy); an empty matrix yields an empty assignment.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return {}, 0.0
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(cost)) or np.any(cost < 0):
        raise ValueError("costs must be finite and nonnegative")
    rows, cols = linear_sum_assignment(cost)
    total = float(cost[rows, cols].sum())
    return {int(r): int(c) for r, c in zip(rows, cols)}, total


def _extract(points: np.ndarray, params: MatchingParams) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        return pts.reshape(0, 2 if params.position_only else 4)
    return pts[:, :2] if params.position_only else pts


def ospa(X, Y, params: MatchingParams) -> float:
    """OSPA distance between two finite sets of state (or position) vectors.

    Inputs are arrays with one vector per row (or empty). With
    ``params.position_only`` the base distance uses the leading two components.
    """
    X = _extract(np.asarray(X, dtype=float).reshape(-1, 4) if np.asarray(X).size else np.empty((0, 4)), params)
    Y = _extract(np.asarray(Y, dtype=float).reshape(-1, 4) if np.asarray(Y).size else np.empty((0, 4)), params)
    m, n = X.shape[0], Y.shape[0]
    if m == 0 and n == 0:
        return 0.0
    if m == 0 or n == 0:
        return float(params.cutoff)
    if m > n:
        X, Y = Y, X
        m, n = n, m
    c, p = params.cutoff, params.order
    D = np.minimum(base_distance_matrix(X, Y, params.base), c) ** p
    _, matched = assign(D)
    total = matched + c**p * (n - m)
    return float((total / n) ** (1.0 / p))


def ospa2(t: Track, u: Track, params: MatchingParams) -> float:
    """Time-averaged per-step singleton OSPA between two tracks.

    Averages over the union of existence domains; steps where exactly one track
    exists contribute c. Returns 0 when both domains are empty. The per-step
    value is the truncated base distance, so the order is effectively 1.
    """
    union = np.union1d(t.times, u.times)
    if union.size == 0:
        return 0.0
    c = params.cutoff
    in_t = np.isin(union, t.times)
    in_u = np.isin(union, u.times)
    both = in_t & in_u
    total = c * float(np.count_nonzero(~both))
    if np.any(both):
        steps = union[both]
        xt = t.states[np.searchsorted(t.times, steps)]
        xu = u.states[np.searchsorted(u.times, steps)]
        Pt, Pu = _extract(xt, params), _extract(xu, params)
        if params.base == "manhattan":
            d = np.abs(Pt - Pu).sum(axis=1)
        else:
            d = np.sqrt(((Pt - Pu) ** 2).sum(axis=1))
        total += float(np.minimum(d, c).sum())
    return total / union.size


def ospa2_matrix(Ta: list[Track], Tb: list[Track], params: MatchingParams) -> np.ndarray:
    out = np.zeros((len(Ta), len(Tb)))
    for i, t in enumerate(Ta):
        for j, u in enumerate(Tb):
            out[i, j] = ospa2(t, u, params)
    return out


def match_track_sets(
    Ta: list[Track], Tb: list[Track], params: MatchingParams
) -> tuple[list[tuple[Track, Track]], list[Track], list[Track]]:
    """Optimal track-set matching with cut-off filtering.

    Builds the OSPA2 cost matrix, solves the assignment, and keeps only pairs
    with cost strictly below the cut-off. Everything else is returned in the
    unmatched lists (input order preserved).
    """
    if not Ta or not Tb:
        return [], list(Ta), list(Tb)
    cost = ospa2_matrix(Ta, Tb, params)
    mapping, _ = assign(cost)
    matched: list[tuple[Track, Track]] = []
    used_a: set[int] = set()
    used_b: set[int] = set()
    for i, j in sorted(mapping.items()):
        if cost[i, j] < params.cutoff:
            matched.append((Ta[i], Tb[j]))
            used_a.add(i)
            used_b.add(j)
    unmatched_a = [t for i, t in enumerate(Ta) if i not in used_a]
    unmatched_b = [u for j, u in enumerate(Tb) if j not in used_b]
    return matched, unmatched_a, unmatched_b
