"""Benchmark the compiled kernels against their pure-numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Reports per-kernel wall times at a few problem sizes plus the speedup of the
compiled extension. Exits nonzero if the extension is not built.
"""

import argparse
import sys
import time

import numpy as np

from crispkit import _kernels_py

try:
    from crispkit import _kernels_cy
except ImportError:
    _kernels_cy = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_haversine(rng, n1, n2):
    lat1 = rng.uniform(-60, 60, n1)
    lon1 = rng.uniform(-170, 170, n1)
    lat2 = rng.uniform(-60, 60, n2)
    lon2 = rng.uniform(-170, 170, n2)
    return lambda impl: impl.pairwise_haversine_m(lat1, lon1, lat2, lon2)


def bench_within(rng, nq, nr):
    qlat = 36.0 + rng.uniform(0, 1, nq)
    qlon = -120.0 + rng.uniform(0, 1, nq)
    rlat = 36.0 + rng.uniform(0, 1, nr)
    rlon = -120.0 + rng.uniform(0, 1, nr)
    return lambda impl: impl.any_within_radius_m(qlat, qlon, rlat, rlon, 256.0)


def bench_softmax(rng, rows, cols):
    scaled = rng.standard_normal((rows, cols)) * 5
    weights = rng.uniform(0, 1, (rows, cols))
    weights /= weights.sum(axis=1, keepdims=True)
    return lambda impl: impl.softmax_nll_core(scaled, weights)


def bench_kmeans_assign(rng, n, k, d):
    points = rng.standard_normal((n, d))
    centers = rng.standard_normal((k, d))
    return lambda impl: impl.kmeans_assign(points, centers)


CASES = [
    ("pairwise_haversine 512x512", bench_haversine, (512, 512)),
    ("pairwise_haversine 2048x2048", bench_haversine, (2048, 2048)),
    ("any_within_radius 2500x7500", bench_within, (2500, 7500)),
    ("softmax_nll 350x350", bench_softmax, (350, 350)),
    ("softmax_nll 1024x1024", bench_softmax, (1024, 1024)),
    ("kmeans_assign 5000x(100,32)", bench_kmeans_assign, (5000, 100, 32)),
    ("kmeans_assign 20000x(16,2)", bench_kmeans_assign, (20000, 16, 2)),
]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if _kernels_cy is None:
        print("compiled extension not built; run pip install -e . first", file=sys.stderr)
        return 1

    rng = np.random.default_rng(0)
    width = max(len(name) for name, _, _ in CASES)
    print(f"{'kernel':<{width}}  {'python':>10}  {'cython':>10}  {'speedup':>8}")
    for name, maker, shape in CASES:
        call = maker(rng, *shape)
        t_py = timeit(lambda: call(_kernels_py), args.repeats)
        t_cy = timeit(lambda: call(_kernels_cy), args.repeats)
        print(f"{name:<{width}}  {t_py * 1e3:9.2f}ms  {t_cy * 1e3:9.2f}ms  {t_py / t_cy:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
