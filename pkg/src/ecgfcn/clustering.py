"""DTW distance, K-medoids partitioning and silhouette-based k selection.

Signals are compared with dependent-multivariate dynamic time warping: the
local cost of aligning time i of one signal with time j of another is the
squared Euclidean distance across all leads, and the classic dynamic
program (steps down, right, diagonal; full boundary conditions; no warping
window) accumulates it.  The returned distance is the accumulated cost,
without a square root.

K-medoids alternates nearest-medoid assignment with in-cluster cost
minimization from a greedy farthest-point seeding, accepting an iteration
only while the total cost strictly improves, which guarantees termination.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None


def _dtw_dp_py(cost: np.ndarray) -> float:
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(
                acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return float(acc[n, m])


if njit is not None:
    _dtw_dp = njit(cache=True)(_dtw_dp_py)
else:  # pragma: no cover
    _dtw_dp = _dtw_dp_py


def _as_time_by_lead(x) -> np.ndarray:
    values = getattr(x, "values", x)
    a = np.asarray(values, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError(f"expected a non-empty (T, L) signal, got shape {a.shape}")
    return a


def dtw_distance(a, b, band: int | None = None) -> float:
    """Accumulated DTW cost between two signals with equal lead counts.

    Lengths may differ.  ``band`` optionally restricts warping to a
    diagonal band of that half-width (useful for long inputs); by default
    the full alignment space is searched.
    """
    xa = _as_time_by_lead(a)
    xb = _as_time_by_lead(b)
    if xa.shape[1] != xb.shape[1]:
        raise ValueError(f"lead counts differ: {xa.shape[1]} vs {xb.shape[1]}")
    # squared Euclidean across leads for every aligned time pair
    sq = (xa * xa).sum(axis=1)[:, None] + (xb * xb).sum(axis=1)[None, :] \
        - 2.0 * (xa @ xb.T)
    np.maximum(sq, 0.0, out=sq)
    if band is not None:
        n, m = sq.shape
        i = np.arange(n)[:, None]
        j = np.arange(m)[None, :]
        sq[np.abs(i * (m / n) - j) > band] = np.inf
    return float(_dtw_dp(sq))


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric non-negative pairwise distances with a zero diagonal."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"distance matrix must be square, got {v.shape}")
        if v.size:
            if np.abs(v - v.T).max() > 1e-9:
                raise ValueError("distance matrix is not symmetric within 1e-9")
            if np.abs(np.diag(v)).max() != 0.0:
                raise ValueError("distance matrix diagonal must be exactly zero")
            if v.min() < 0:
                raise ValueError("distances must be non-negative")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


def pairwise_dtw_matrix(items, band: int | None = None) -> DistanceMatrix:
    """DTW distances between all pairs; order-independent up to permutation."""
    arrays = [_as_time_by_lead(x) for x in items]
    n = len(arrays)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = dtw_distance(arrays[i], arrays[j], band=band)
    return DistanceMatrix(d)


# ---------------------------------------------------------------------------
# K-medoids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusteringResult:
    k: int
    medoids: np.ndarray           # indices into the clustered set
    assignment: np.ndarray        # sample -> position in ``medoids``
    cost: float                   # sum of distances to assigned medoids
    silhouette: float | None      # None for k = 1


def _dist_values(dist) -> np.ndarray:
    if isinstance(dist, DistanceMatrix):
        return dist.values
    return DistanceMatrix(np.asarray(dist)).values


def _farthest_point_seed(d: np.ndarray, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    first = int(rng.integers(d.shape[0]))
    medoids = [first]
    nearest = d[first].copy()
    nearest[first] = -1.0  # taken points can never be re-picked
    for _ in range(1, k):
        nxt = int(np.argmax(nearest))  # ties -> smallest index
        medoids.append(nxt)
        np.minimum(nearest, d[nxt], out=nearest)
        nearest[nxt] = -1.0
    return np.array(sorted(medoids), dtype=np.int64)


def _assign(d: np.ndarray, medoids: np.ndarray) -> np.ndarray:
    assignment = np.argmin(d[:, medoids], axis=1)
    # with duplicate points a medoid could tie onto a sibling's cluster
    assignment[medoids] = np.arange(medoids.size)
    return assignment


def kmedoids(dist, k: int, seed: int = 0) -> ClusteringResult:
    """Alternating assignment / medoid update on a precomputed matrix.

    Deterministic per seed; the total cost never increases between
    iterations and the loop stops as soon as it fails to strictly improve
    or the medoid set is stable.
    """
    d = _dist_values(dist)
    n = d.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    medoids = _farthest_point_seed(d, k, seed)
    assignment = _assign(d, medoids)
    cost = float(d[np.arange(n), medoids[assignment]].sum())
    while True:
        new_medoids = medoids.copy()
        for ci in range(k):
            members = np.nonzero(assignment == ci)[0]
            if members.size == 0:
                continue
            within = d[np.ix_(members, members)].sum(axis=1)
            new_medoids[ci] = members[int(np.argmin(within))]
        new_medoids = np.array(sorted(set(new_medoids.tolist())), dtype=np.int64)
        if new_medoids.size < k:
            break  # two clusters collapsed onto one medoid; keep current state
        new_assignment = _assign(d, new_medoids)
        new_cost = float(d[np.arange(n), new_medoids[new_assignment]].sum())
        if new_cost < cost:
            medoids, assignment, cost = new_medoids, new_assignment, new_cost
        else:
            break
    sil = silhouette(d, assignment) if k >= 2 else None
    return ClusteringResult(k=k, medoids=medoids, assignment=assignment,
                            cost=cost, silhouette=sil)


# ---------------------------------------------------------------------------
# Silhouette
# ---------------------------------------------------------------------------

def silhouette_samples(dist, assignment: np.ndarray) -> np.ndarray:
    """Per-sample silhouette values; singleton-cluster samples score 0."""
    d = _dist_values(dist)
    assignment = np.asarray(assignment)
    clusters = np.unique(assignment)
    if clusters.size < 2:
        raise ValueError("silhouette needs at least two clusters")
    n = d.shape[0]
    out = np.zeros(n)
    members = {c: np.nonzero(assignment == c)[0] for c in clusters}
    for i in range(n):
        own = members[assignment[i]]
        if own.size == 1:
            out[i] = 0.0
            continue
        a = d[i, own].sum() / (own.size - 1)  # mean intra, excluding self
        b = min(d[i, members[c]].mean() for c in clusters if c != assignment[i])
        denom = max(a, b)
        out[i] = 0.0 if denom == 0 else (b - a) / denom
    return out


def silhouette(dist, assignment: np.ndarray) -> float:
    """Mean silhouette over all samples, in [-1, 1]."""
    return float(silhouette_samples(dist, assignment).mean())


# ---------------------------------------------------------------------------
# k selection
# ---------------------------------------------------------------------------

def select_k_from_matrix(dist, k_candidates=(2, 3, 4),
                         seed: int = 0) -> ClusteringResult:
    """Cluster at each candidate k and keep the best mean silhouette.

    Ties go to the smaller k.
    """
    d = _dist_values(dist)
    ks = sorted(set(int(k) for k in k_candidates))
    if not ks or ks[0] < 2:
        raise ValueError("candidate cluster counts must all be >= 2")
    if len(d) < max(ks) + 1:
        raise ValueError(
            f"need at least {max(ks) + 1} samples to choose among k={ks}, "
            f"got {len(d)}")
    best: ClusteringResult | None = None
    for k in ks:
        res = kmedoids(d, k, seed=seed)
        if best is None or res.silhouette > best.silhouette:
            best = res
    return best


def select_k(items, k_candidates=(2, 3, 4), seed: int = 0,
             band: int | None = None) -> ClusteringResult:
    """Pairwise DTW matrix once, then :func:`select_k_from_matrix`."""
    return select_k_from_matrix(pairwise_dtw_matrix(items, band=band),
                                k_candidates, seed=seed)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def write_cluster_report_csv(result: ClusteringResult, dist,
                             path: str | Path,
                             sample_ids: np.ndarray | None = None) -> None:
    """Per-sample cluster table plus a ``.summary`` sidecar.

    Columns: sample id, cluster, medoid flag, silhouette contribution.
    """
    d = _dist_values(dist)
    contrib = silhouette_samples(d, result.assignment) if result.k >= 2 \
        else np.zeros(len(d))
    ids = np.arange(len(d)) if sample_ids is None else np.asarray(sample_ids)
    medoid_set = set(result.medoids.tolist())
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample", "cluster", "is_medoid", "silhouette"])
        for i in range(len(d)):
            w.writerow([int(ids[i]), int(result.assignment[i]),
                        int(i in medoid_set), repr(float(contrib[i]))])
    summary = [f"k={result.k}",
               f"silhouette={repr(float(result.silhouette)) if result.silhouette is not None else 'nan'}",
               f"cost={repr(float(result.cost))}",
               f"medoids={','.join(str(int(ids[m])) for m in result.medoids)}"]
    path.with_suffix(path.suffix + ".summary").write_text("\n".join(summary) + "\n")
