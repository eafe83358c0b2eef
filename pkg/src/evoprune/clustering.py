"""Seeded k-means: k-means++ initialization, Lloyd iterations, empty-cluster repair."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import make_rng


@dataclass(frozen=True)
class ClusterAssignment:
    centroids: np.ndarray
    labels: tuple[int, ...]
    inertia_history: tuple[float, ...]
    iterations: int
    repairs: int

    @property
    def k_clusters(self) -> int:
        return len(self.centroids)

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]

    def members(self, cluster_id: int) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.labels) if c == cluster_id)


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)


def _seed_centroids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++: first center uniform, then proportional to squared distance."""
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining mass at the chosen centers (duplicate points)
            remaining = [i for i in range(n) if i not in set(chosen)]
            idx = remaining[int(rng.integers(len(remaining)))]
        chosen.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def _repair_empty(labels: np.ndarray, d2: np.ndarray, k: int) -> tuple[np.ndarray, int]:
    """Give each empty cluster the point currently farthest from its own centroid."""
    counts = np.bincount(labels, minlength=k)
    repairs = 0
    if counts.min() > 0:
        return labels, repairs
    own_dist = d2[np.arange(len(labels)), labels]
    order = np.argsort(-own_dist, kind="stable")
    for cluster in range(k):
        if counts[cluster] > 0:
            continue
        for idx in order:
            src = labels[idx]
            if counts[src] > 1:
                labels = labels.copy()
                labels[idx] = cluster
                counts[src] -= 1
                counts[cluster] += 1
                repairs += 1
                break
        else:
            raise RuntimeError("cannot repair empty cluster: not enough points")
    return labels, repairs


def kmeans(points, k_clusters: int, *, seed: int = 0, max_iters: int = 100) -> ClusterAssignment:
    """Lloyd's algorithm from a k-means++ seeding.

    Stops when assignments are stable or after max_iters. Inertia is recorded
    after every assignment step; absent repairs it is non-increasing, and the
    final labels map each point to its nearest final centroid.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise ValueError("points must be a non-empty 2-D array")
    if k_clusters < 1:
        raise ValueError(f"k_clusters must be positive, got {k_clusters}")
    if len(pts) < k_clusters:
        raise ValueError(f"need at least {k_clusters} points, got {len(pts)}")
    if max_iters < 1:
        raise ValueError("max_iters must be positive")

    rng = make_rng(seed)
    centroids = _seed_centroids(pts, k_clusters, rng)
    history: list[float] = []
    repairs = 0
    prev: np.ndarray | None = None
    iterations = max_iters
    n = len(pts)
    for it in range(1, max_iters + 1):
        d2 = _squared_distances(pts, centroids)
        labels = d2.argmin(axis=1)
        labels, nrep = _repair_empty(labels, d2, k_clusters)
        repairs += nrep
        history.append(float(d2[np.arange(n), labels].sum()))
        if prev is not None and np.array_equal(labels, prev):
            iterations = it
            break
        prev = labels
        if it < max_iters:
            # keep the returned centroids consistent with the final assignment
            centroids = np.stack([pts[labels == c].mean(axis=0) for c in range(k_clusters)])

    return ClusterAssignment(
        centroids=centroids,
        labels=tuple(int(c) for c in labels),
        inertia_history=tuple(history),
        iterations=iterations,
        repairs=repairs,
    )
