"""k-means reduction of raw stop locations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ClusterResult:
    centroids: np.ndarray          # (k, 2)
    labels: np.ndarray             # raw stop -> centroid index
    iterations: int
    inertia_history: list[float] = field(default_factory=list)
    reseeded: int = 0

    def distances(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.asarray(points, float) - self.centroids[self.labels], axis=1)

    def distance_stats(self, points: np.ndarray) -> dict[str, float]:
        d = self.distances(points)
        return {"mean": float(d.mean()), "std": float(d.std()), "median": float(np.median(d)), "max": float(d.max())}


def _inertia(points, centroids, labels) -> float:
    return float(np.sum((points - centroids[labels]) ** 2))


def _assign(points, centroids):
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1), d2


def cluster_stops(points, k: int, seed: int = 0, max_iterations: int = 300) -> ClusterResult:
    """Lloyd iterations from a k-means++ start until labels stop changing.

    An emptied cluster is re-seeded at the point farthest from its current
    centroid, which cannot raise the within-cluster sum of squares.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n} clusters, got {k}")
    rng = np.random.default_rng(seed)
    centroids = np.empty((k, 2))
    centroids[0] = pts[rng.integers(n)]
    closest = ((pts - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = closest.sum()
        # every remaining point coincides with a chosen centroid: take unused points in order
        idx = int(rng.choice(n, p=closest / total)) if total > 0 else c
        centroids[c] = pts[idx]
        closest = np.minimum(closest, ((pts - centroids[c]) ** 2).sum(axis=1))

    labels, d2 = _assign(pts, centroids)
    history = [_inertia(pts, centroids, labels)]
    reseeded = 0
    it = 0
    for it in range(1, max_iterations + 1):
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = pts[members].mean(axis=0)
        labels_new, d2 = _assign(pts, centroids)
        for c in range(k):
            if not np.any(labels_new == c):
                far = int(np.argmax(d2[np.arange(n), labels_new]))
                centroids[c] = pts[far]
                labels_new[far] = c
                d2[far, c] = 0.0
                reseeded += 1
        history.append(_inertia(pts, centroids, labels_new))
        if np.array_equal(labels_new, labels):
            labels = labels_new
            break
        labels = labels_new
    return ClusterResult(centroids, labels, it, history, reseeded)
