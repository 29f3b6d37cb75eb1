"""Seeded Lloyd iterations with k-means++ initialization.

Written for reproducibility: all randomness flows through one
numpy Generator, distances are computed exactly (no expanded dot-product
shortcut, so the recorded objective is the literal within-cluster sum of
squared distances), and the objective after every assignment pass is kept
so callers can verify it never increases.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import as_float_matrix, check_seed

_ASSIGN_CHUNK = 8192


@dataclass(frozen=True)
class KMeansResult:
    """Best run out of ``n_init`` restarts.

    labels are zero-based row indices into centroids; objective_history has
    one entry per assignment pass, starting right after initialization.
    """

    centroids: np.ndarray
    labels: np.ndarray
    objective: float
    objective_history: tuple
    n_iter: int


def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Exact pairwise squared Euclidean distances, chunked over points."""
    n = points.shape[0]
    out = np.empty((n, centroids.shape[0]), dtype=np.float64)
    for start in range(0, n, _ASSIGN_CHUNK):
        stop = min(start + _ASSIGN_CHUNK, n)
        diff = points[start:stop, None, :] - centroids[None, :, :]
        out[start:stop] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def _kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Classic D^2-weighted seeding; degenerate all-zero weights fall back to uniform."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[int(rng.integers(n))]
    if k == 1:
        return centroids
    closest = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(n))
        centroids[j] = points[idx]
        if j + 1 < k:
            np.minimum(closest, ((points - centroids[j]) ** 2).sum(axis=1), out=closest)
    return centroids


def _cluster_means(points, labels, k, previous, point_costs):
    """Means per cluster; an empty cluster is re-seeded with the point
    farthest from its currently assigned centroid (each such point used once)."""
    dim = points.shape[1]
    counts = np.bincount(labels, minlength=k)
    sums = np.empty((k, dim), dtype=np.float64)
    for j in range(dim):
        sums[:, j] = np.bincount(labels, weights=points[:, j], minlength=k)
    centroids = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], previous)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        remaining = point_costs.copy()
        for cluster in empty:
            donor = int(remaining.argmax())
            centroids[cluster] = points[donor]
            remaining[donor] = -1.0
    return centroids


def _lloyd(points, k, centroids, max_iter, tol):
    n = points.shape[0]
    rows = np.arange(n)
    sq = squared_distances(points, centroids)
    labels = sq.argmin(axis=1)
    point_costs = sq[rows, labels]
    objective = float(point_costs.sum())
    history = [objective]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        centroids = _cluster_means(points, labels, k, centroids, point_costs)
        sq = squared_distances(points, centroids)
        new_labels = sq.argmin(axis=1)
        point_costs = sq[rows, new_labels]
        new_objective = float(point_costs.sum())
        history.append(new_objective)
        unchanged = bool(np.array_equal(new_labels, labels))
        previous, labels, objective = objective, new_labels, new_objective
        if unchanged or new_objective == 0.0:
            break
        if previous - new_objective < tol * previous:
            break
    return centroids, labels, objective, history, n_iter


def kmeans(
    points,
    n_clusters: int,
    *,
    max_iter: int = 100,
    tol: float = 1e-4,
    random_state: int = 0,
    n_init: int = 1,
) -> KMeansResult:
    """Cluster points into ``n_clusters`` groups.

    Stops when the relative objective decrease falls below ``tol``, the
    assignment stabilizes, the objective reaches zero, or ``max_iter``
    update passes have run. With ``n_init`` > 1 the whole procedure restarts
    from fresh k-means++ seeds (drawn from the same seeded generator) and
    the run with the lowest final objective wins.
    """
    pts = as_float_matrix(points, "points")
    n = pts.shape[0]
    k = int(n_clusters)
    if k < 1:
        raise ValueError(f"n_clusters must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"n_clusters={k} exceeds the {n} available points")
    if int(max_iter) < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if not (float(tol) >= 0.0):
        raise ValueError(f"tol must be >= 0, got {tol}")
    if int(n_init) < 1:
        raise ValueError(f"n_init must be >= 1, got {n_init}")

    rng = np.random.default_rng(check_seed(random_state))
    best = None
    for _ in range(int(n_init)):
        init = _kmeans_plusplus(pts, k, rng)
        centroids, labels, objective, history, n_iter = _lloyd(
            pts, k, init, int(max_iter), float(tol)
        )
        if best is None or objective < best.objective:
            best = KMeansResult(
                centroids=centroids,
                labels=labels.astype(np.int64),
                objective=objective,
                objective_history=tuple(history),
                n_iter=n_iter,
            )
    return best
