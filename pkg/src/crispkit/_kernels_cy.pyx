# Compiled twins of the kernels in _kernels_py.py; same signatures, same
# semantics, selected at import time by crispkit.backend.

import numpy as np

cimport numpy as cnp
from libc.math cimport asin, cos, exp, log, sin, sqrt

cnp.import_array()

cdef double EARTH_RADIUS = 6_371_008.8
cdef double DEG2RAD = 0.017453292519943295

EARTH_RADIUS_M = EARTH_RADIUS


cdef inline double _haversine_rad(double p1, double l1, double p2, double l2) nogil:
    cdef double sdlat = sin((p2 - p1) * 0.5)
    cdef double sdlon = sin((l2 - l1) * 0.5)
    cdef double a = sdlat * sdlat + cos(p1) * cos(p2) * sdlon * sdlon
    if a < 0.0:
        a = 0.0
    elif a > 1.0:
        a = 1.0
    return 2.0 * EARTH_RADIUS * asin(sqrt(a))


def pairwise_haversine_m(lat1, lon1, lat2, lon2):
    cdef double[::1] p1 = np.ascontiguousarray(lat1, dtype=np.float64)
    cdef double[::1] l1 = np.ascontiguousarray(lon1, dtype=np.float64)
    cdef double[::1] p2 = np.ascontiguousarray(lat2, dtype=np.float64)
    cdef double[::1] l2 = np.ascontiguousarray(lon2, dtype=np.float64)
    cdef Py_ssize_t n1 = p1.shape[0], n2 = p2.shape[0], i, j
    out_arr = np.empty((n1, n2), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    # hoist the per-point trigonometry out of the pair loop
    rad2_arr = np.radians(np.asarray(lat2, dtype=np.float64))
    cdef double[::1] p2_rad = np.ascontiguousarray(rad2_arr)
    cdef double[::1] l2_rad = np.ascontiguousarray(np.radians(np.asarray(lon2, dtype=np.float64)))
    cdef double[::1] cos2 = np.ascontiguousarray(np.cos(rad2_arr))
    cdef double pi_rad, li_rad, cos1, sdlat, sdlon, a
    with nogil:
        for i in range(n1):
            pi_rad = p1[i] * DEG2RAD
            li_rad = l1[i] * DEG2RAD
            cos1 = cos(pi_rad)
            for j in range(n2):
                sdlat = sin((p2_rad[j] - pi_rad) * 0.5)
                sdlon = sin((l2_rad[j] - li_rad) * 0.5)
                a = sdlat * sdlat + cos1 * cos2[j] * sdlon * sdlon
                if a < 0.0:
                    a = 0.0
                elif a > 1.0:
                    a = 1.0
                out[i, j] = 2.0 * EARTH_RADIUS * asin(sqrt(a))
    return out_arr


def any_within_radius_m(query_lat, query_lon, ref_lat, ref_lon, radius_m):
    cdef double[::1] qlat = np.ascontiguousarray(query_lat, dtype=np.float64)
    cdef double[::1] qlon = np.ascontiguousarray(query_lon, dtype=np.float64)
    cdef double[::1] rlat = np.ascontiguousarray(ref_lat, dtype=np.float64)
    cdef double[::1] rlon = np.ascontiguousarray(ref_lon, dtype=np.float64)
    cdef Py_ssize_t nq = qlat.shape[0], nr = rlat.shape[0], i, j
    out_arr = np.zeros(nq, dtype=bool)
    cdef cnp.uint8_t[::1] out = out_arr.view(np.uint8)
    cdef double radius = radius_m
    # generous latitude prefilter: 1 deg latitude is always > 110 km
    cdef double lat_margin = radius / 110_000.0
    cdef double pq, lq
    with nogil:
        for i in range(nq):
            pq = qlat[i] * DEG2RAD
            lq = qlon[i] * DEG2RAD
            for j in range(nr):
                if qlat[i] - rlat[j] > lat_margin or rlat[j] - qlat[i] > lat_margin:
                    continue
                if _haversine_rad(pq, lq, rlat[j] * DEG2RAD, rlon[j] * DEG2RAD) <= radius:
                    out[i] = 1
                    break
    return out_arr


def softmax_nll_core(scaled, row_weights):
    cdef double[:, ::1] s = np.ascontiguousarray(scaled, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(row_weights, dtype=np.float64)
    cdef Py_ssize_t n_rows = s.shape[0], n_cols = s.shape[1], r, c
    grad_arr = np.empty((n_rows, n_cols), dtype=np.float64)
    cdef double[:, ::1] grad = grad_arr
    cdef double loss = 0.0, m, denom, wsum, e, inv_n
    inv_n = 1.0 / n_rows
    with nogil:
        for r in range(n_rows):
            m = s[r, 0]
            for c in range(1, n_cols):
                if s[r, c] > m:
                    m = s[r, c]
            denom = 0.0
            wsum = 0.0
            for c in range(n_cols):
                e = exp(s[r, c] - m)
                grad[r, c] = e
                denom += e
                wsum += w[r, c] * s[r, c]
            loss += m + log(denom) - wsum
            for c in range(n_cols):
                grad[r, c] = (grad[r, c] / denom - w[r, c]) * inv_n
    return loss * inv_n, grad_arr


def kmeans_assign(points, centers):
    cdef double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[:, ::1] ctr = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], d = p.shape[1], k = ctr.shape[0], i, j, c
    labels_arr = np.empty(n, dtype=np.int64)
    sqdist_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef double[::1] sqdist = sqdist_arr
    cdef double best, acc, diff
    cdef Py_ssize_t best_j
    with nogil:
        for i in range(n):
            best = -1.0
            best_j = 0
            for j in range(k):
                acc = 0.0
                for c in range(d):
                    diff = p[i, c] - ctr[j, c]
                    acc += diff * diff
                if best < 0.0 or acc < best:
                    best = acc
                    best_j = j
            labels[i] = best_j
            sqdist[i] = best
    return labels_arr, sqdist_arr
