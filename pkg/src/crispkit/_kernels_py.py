"""Pure-numpy implementations of the hot kernels.

These are the fallback twins of the compiled extension in
``_kernels_cy.pyx``; both sides expose the same signatures and are selected
at import time by :mod:`crispkit.backend`.
"""

import numpy as np

EARTH_RADIUS_M = 6_371_008.8


def pairwise_haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters between every pair of points.

    Args:
        lat1, lon1: coordinates of the first point set, decimal degrees, shape (n1,)
        lat2, lon2: coordinates of the second point set, shape (n2,)

    Returns:
        (n1, n2) float64 matrix of distances on the mean-radius sphere.
    """
    p1 = np.radians(np.asarray(lat1, dtype=np.float64))[:, None]
    p2 = np.radians(np.asarray(lat2, dtype=np.float64))[None, :]
    l1 = np.radians(np.asarray(lon1, dtype=np.float64))[:, None]
    l2 = np.radians(np.asarray(lon2, dtype=np.float64))[None, :]
    sin_dlat = np.sin((p2 - p1) * 0.5)
    sin_dlon = np.sin((l2 - l1) * 0.5)
    a = sin_dlat * sin_dlat + np.cos(p1) * np.cos(p2) * sin_dlon * sin_dlon
    a = np.clip(a, 0.0, 1.0)
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(a))


def any_within_radius_m(query_lat, query_lon, ref_lat, ref_lon, radius_m):
    """For each query point, whether any reference point lies within radius_m.

    Distances use the closed ball (<= radius_m). Reference set may be empty,
    in which case every query is False.
    """
    query_lat = np.asarray(query_lat, dtype=np.float64)
    query_lon = np.asarray(query_lon, dtype=np.float64)
    ref_lat = np.asarray(ref_lat, dtype=np.float64)
    ref_lon = np.asarray(ref_lon, dtype=np.float64)
    out = np.zeros(query_lat.shape[0], dtype=bool)
    if ref_lat.shape[0] == 0:
        return out
    # chunked so the pairwise matrix stays modest for large corpora
    chunk = max(1, int(4_000_000 // max(1, ref_lat.shape[0])))
    for start in range(0, query_lat.shape[0], chunk):
        stop = start + chunk
        d = pairwise_haversine_m(
            query_lat[start:stop], query_lon[start:stop], ref_lat, ref_lon
        )
        out[start:stop] = (d <= radius_m).any(axis=1)
    return out


def softmax_nll_core(scaled, row_weights):
    """Mean positive-weighted negative log-softmax over rows, with gradient.

    Args:
        scaled: (R, C) float64 score matrix (already divided by temperature).
        row_weights: (R, C) float64 nonnegative weights, each row summing to 1.

    Returns:
        (loss, grad) where grad is d(loss)/d(scaled), shape (R, C).

    Rows are stabilized by max subtraction before exponentiation.
    """
    scaled = np.asarray(scaled, dtype=np.float64)
    row_weights = np.asarray(row_weights, dtype=np.float64)
    m = scaled.max(axis=1, keepdims=True)
    z = np.exp(scaled - m)
    denom = z.sum(axis=1)
    lse = m[:, 0] + np.log(denom)
    row_loss = lse - (row_weights * scaled).sum(axis=1)
    n_rows = scaled.shape[0]
    loss = float(row_loss.sum() / n_rows)
    grad = (z / denom[:, None] - row_weights) / n_rows
    return loss, grad


def kmeans_assign(points, centers):
    """Assign each point to its nearest center by squared Euclidean distance.

    Ties go to the lowest center index. Uses the direct (x - c)^2 form so a
    point sitting exactly on a center reports distance exactly 0. Returns
    (labels, sqdist) with shapes (n,) int64 and (n,) float64.
    """
    points = np.asarray(points, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    n = points.shape[0]
    k, d = centers.shape
    labels = np.empty(n, dtype=np.int64)
    sqdist = np.empty(n, dtype=np.float64)
    chunk = max(1, int(8_000_000 // max(1, k * d)))
    for start in range(0, n, chunk):
        stop = start + chunk
        block = points[start:stop]
        diff = block[:, None, :] - centers[None, :, :]
        d2 = (diff * diff).sum(axis=2)
        lab = d2.argmin(axis=1)
        labels[start:stop] = lab
        sqdist[start:stop] = d2[np.arange(block.shape[0]), lab]
    return labels, sqdist
