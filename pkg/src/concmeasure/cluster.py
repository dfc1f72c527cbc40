"""k-means style clustering under the l1 metric (centroid = coordinate-wise median)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .metric_index import Metric, pairwise


@dataclass
class Clustering:
    centroids: np.ndarray  # (T, n)
    assignment: np.ndarray  # (num_points,) cluster id per point
    iterations_run: int
    inertia: float
    inertia_history: list

    @property
    def T(self) -> int:
        return self.centroids.shape[0]

    def members(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == t)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def seed_centroids(points, T: int, seed) -> np.ndarray:
    """Distance-weighted seeding: the first centroid is uniform, each next one
    is drawn with probability proportional to its l1 distance to the nearest
    centroid chosen so far."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if T < 1 or points.shape[0] < T:
        raise ParameterError(f"need 1 <= T <= number of points, got T={T}, points={points.shape[0]}")
    rng = _rng(seed)
    m = points.shape[0]
    chosen = [int(rng.integers(m))]
    nearest = pairwise(points[chosen[0]][None, :], points, Metric.L1)[0]
    for _ in range(1, T):
        total = nearest.sum()
        if total > 0:
            nxt = int(rng.choice(m, p=nearest / total))
        else:
            nxt = int(rng.integers(m))
        chosen.append(nxt)
        nearest = np.minimum(nearest, pairwise(points[nxt][None, :], points, Metric.L1)[0])
    return points[chosen].copy()


def lower_median(values: np.ndarray) -> np.ndarray:
    """Column-wise median; an even count takes the lower of the two middles."""
    count = values.shape[0]
    return np.partition(values, (count - 1) // 2, axis=0)[(count - 1) // 2]


def _assign(points, centroids):
    d = pairwise(points, centroids, Metric.L1)
    labels = np.argmin(d, axis=1)  # first minimum -> lowest cluster id
    return labels, d[np.arange(points.shape[0]), labels]


def _repair_empty(points, centroids, labels, dist):
    """Move each empty centroid onto the point farthest from its own centroid."""
    T = centroids.shape[0]
    for _ in range(T):
        counts = np.bincount(labels, minlength=T)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            break
        for t in empty:
            far = int(np.argmax(dist))
            if dist[far] == 0:
                return labels, dist
            centroids[t] = points[far]
            dist[far] = 0.0
        labels, dist = _assign(points, centroids)
    return labels, dist


def kmeans_l1(points, T: int, max_iterations: int = 30, seed=0) -> Clustering:
    """Alternate l1 assignment and median update until a fixed point or the cap."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if T < 1 or points.shape[0] < T:
        raise ParameterError(f"need 1 <= T <= number of points, got T={T}, points={points.shape[0]}")
    if max_iterations < 1:
        raise ParameterError("max_iterations must be >= 1")
    centroids = seed_centroids(points, T, seed)
    labels, dist = _assign(points, centroids)
    labels, dist = _repair_empty(points, centroids, labels, dist)
    history = [float(dist.sum())]
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        updated = centroids.copy()
        for t in range(T):
            members = points[labels == t]
            if members.shape[0]:
                updated[t] = lower_median(members)
        new_labels, dist = _assign(points, updated)
        new_labels, dist = _repair_empty(points, updated, new_labels, dist)
        history.append(float(dist.sum()))
        converged = np.array_equal(updated, centroids) and np.array_equal(new_labels, labels)
        centroids, labels = updated, new_labels
        if converged:
            break
    return Clustering(centroids, labels, iterations, float(dist.sum()), history)
