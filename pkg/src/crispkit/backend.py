"""Kernel backend selection.

The compiled extension is preferred when it imports cleanly; otherwise the
pure-numpy twins take over. Setting the environment variable
``CRISPKIT_PURE_PYTHON=1`` forces the fallback (useful for benchmarking and
for testing both code paths).
"""

import os

from crispkit import _kernels_py

_FORCE_PURE = os.environ.get("CRISPKIT_PURE_PYTHON", "") not in ("", "0")

if _FORCE_PURE:
    _impl = _kernels_py
else:
    try:
        from crispkit import _kernels_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

EARTH_RADIUS_M = _kernels_py.EARTH_RADIUS_M

pairwise_haversine_m = _impl.pairwise_haversine_m
any_within_radius_m = _impl.any_within_radius_m
softmax_nll_core = _impl.softmax_nll_core
kmeans_assign = _impl.kmeans_assign


def active_backend() -> str:
    """Name of the kernel backend selected at import ('cython' or 'python')."""
    return BACKEND
