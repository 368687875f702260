"""Independent reference implementations used only by the test suite.

Everything here deliberately avoids the package's own code paths: brute
force, exhaustive enumeration, exact rational arithmetic and central
finite differences.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations
from math import comb

import numpy as np


def nn1_accuracy(train_x: np.ndarray, train_y: np.ndarray,
                 test_x: np.ndarray, test_y: np.ndarray) -> float:
    """1-nearest-neighbour accuracy under squared Euclidean distance."""
    a = train_x.reshape(train_x.shape[0], -1).astype(np.float64)
    b = test_x.reshape(test_x.shape[0], -1).astype(np.float64)
    d = (b * b).sum(1)[:, None] + (a * a).sum(1)[None, :] - 2.0 * b @ a.T
    return float((train_y[np.argmin(d, axis=1)] == test_y).mean())


def finite_diff_grad(loss_fn, array: np.ndarray, rel_h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. one array.

    The step scales with the magnitude of each entry (floor 1.0).
    """
    grad = np.zeros_like(array, dtype=np.float64)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        h = rel_h * max(1.0, abs(float(array[idx])))
        old = array[idx]
        array[idx] = old + h
        up = loss_fn()
        array[idx] = old - h
        down = loss_fn()
        array[idx] = old
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def max_rel_err(analytic: np.ndarray, reference: np.ndarray,
                floor: float = 1e-3) -> float:
    """max |a - r| / max(|a|, |r|, floor), the gradient-check metric.

    The floor keeps finite-difference roundoff on near-zero entries from
    dominating: entries below it are held to an absolute tolerance of
    floor * threshold instead, which still exposes any real sign or
    scale error.
    """
    a = np.asarray(analytic, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(r)), floor)
    return float((np.abs(a - r) / denom).max())


def hypergeom_tail(a: int, b: int, c: int, d: int) -> Fraction:
    """Exact P(X >= a) for the 2x2 table [[a,b],[c,d]] with fixed margins."""
    n = a + b + c + d
    row1 = a + b
    col1 = a + c
    hi = min(row1, col1)
    total = Fraction(0)
    for x in range(a, hi + 1):
        total += Fraction(comb(col1, x) * comb(n - col1, row1 - x), comb(n, row1))
    return total


def dtw_exhaustive(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum-cost alignment by enumerating every monotone warping path.

    Local cost is the squared Euclidean distance across leads.  Exponential
    in the input lengths; keep them tiny.
    """
    a = np.atleast_2d(a.T).T.astype(np.float64)
    b = np.atleast_2d(b.T).T.astype(np.float64)
    n, m = a.shape[0], b.shape[0]

    def cost(i, j):
        diff = a[i] - b[j]
        return float(diff @ diff)

    best = [np.inf]

    def walk(i, j, acc):
        if acc >= best[0]:
            return
        if i == n - 1 and j == m - 1:
            best[0] = acc
            return
        if i + 1 < n:
            walk(i + 1, j, acc + cost(i + 1, j))
        if j + 1 < m:
            walk(i, j + 1, acc + cost(i, j + 1))
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc + cost(i + 1, j + 1))

    walk(0, 0, cost(0, 0))
    return best[0]


def kmedoids_exhaustive(dist: np.ndarray, k: int):
    """Globally optimal medoid set by trying every k-subset (n <= ~10).

    Returns (cost, medoids, assignment).
    """
    n = dist.shape[0]
    best = (np.inf, None, None)
    for medoids in combinations(range(n), k):
        med = np.array(medoids)
        assign = np.argmin(dist[:, med], axis=1)
        cost = float(dist[np.arange(n), med[assign]].sum())
        if cost < best[0]:
            best = (cost, med, assign)
    return best


def silhouette_reference(dist: np.ndarray, assignment: np.ndarray) -> float:
    """Textbook silhouette, written independently of the package version."""
    values = []
    labels = np.unique(assignment)
    for i in range(dist.shape[0]):
        mine = assignment[i]
        own = [j for j in range(dist.shape[0]) if assignment[j] == mine and j != i]
        if not own:
            values.append(0.0)
            continue
        a = float(np.mean([dist[i, j] for j in own]))
        b = min(float(np.mean([dist[i, j] for j in range(dist.shape[0])
                               if assignment[j] == other]))
                for other in labels if other != mine)
        values.append(0.0 if max(a, b) == 0 else (b - a) / max(a, b))
    return float(np.mean(values))
