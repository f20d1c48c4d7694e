"""K-means++ clustering (Lloyd iterations with D^2 seeding).

Seeding picks the first center uniformly and each subsequent center with
probability proportional to the squared distance to the nearest chosen
center. Iterations stop once the largest center shift drops below ``tol`` or
``max_iters`` is reached. Empty clusters are reseeded at the point farthest
from its current center.
"""

from dataclasses import dataclass

import numpy as np

from crispkit import backend
from crispkit.errors import TooFewPointsError


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    max_iters: int = 300
    tol: float = 1e-6
    seed: int = 0

    def validate(self, n_points: int) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.k > n_points:
            raise TooFewPointsError(f"k={self.k} exceeds n_points={n_points}")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def _seed_centers(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(0, n))
    centers[0] = points[first]
    sq = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = sq.sum()
        if total <= 0:
            # all remaining points coincide with a chosen center
            idx = int(rng.integers(0, n))
        else:
            idx = int(rng.choice(n, p=sq / total))
        centers[j] = points[idx]
        sq = np.minimum(sq, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans_pp(
    points, config: KMeansConfig, return_history: bool = False
):
    """Cluster points; returns (assignments, centers, inertia).

    With ``return_history`` a fourth element carries the inertia measured at
    every assignment step (non-increasing by Lloyd's argument).
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be 2-D, got shape {points.shape}")
    if not np.isfinite(points).all():
        raise ValueError("points must be finite")
    n = points.shape[0]
    config.validate(n)
    rng = np.random.default_rng(config.seed)
    centers = _seed_centers(points, config.k, rng)

    history = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(config.max_iters):
        labels, sqdist = backend.kmeans_assign(points, centers)
        history.append(float(sqdist.sum()))
        new_centers = centers.copy()
        counts = np.bincount(labels, minlength=config.k)
        for j in range(config.k):
            if counts[j] > 0:
                new_centers[j] = points[labels == j].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # reseed each empty cluster at the point currently farthest
            # from its assigned center
            claim = sqdist.copy()
            for j in empty:
                far = int(np.argmax(claim))
                new_centers[j] = points[far]
                claim[far] = -np.inf
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < config.tol:
            break
    labels, sqdist = backend.kmeans_assign(points, centers)
    inertia = float(sqdist.sum())
    history.append(inertia)
    if return_history:
        return labels, centers, inertia, history
    return labels, centers, inertia
