"""Backend selection for the hot kernels.

Set ``ETREE_BACKEND=numpy`` to run the pure-numpy path; the default is
``numba`` when the package imports cleanly. ``NUMBA_NUM_THREADS`` caps the
worker pool as usual.
"""
from __future__ import annotations

import logging
import os

logger = logging.getLogger(__name__)

# TBB in common distro builds is too old for numba and triggers a warning
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

BACKENDS = ("numba", "numpy")


def default_backend() -> str:
    name = os.environ.get("ETREE_BACKEND", "numba").strip().lower()
    if name not in BACKENDS:
        raise ValueError(f"ETREE_BACKEND must be one of {BACKENDS}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        logger.warning("numba unavailable, falling back to numpy kernels")
        return "numpy"
    return name


def max_workers() -> int:
    if HAVE_NUMBA:
        return int(numba.config.NUMBA_NUM_THREADS)
    return 1


def set_workers(n: int | None) -> int:
    """Set the kernel thread count, clamped to what numba was started with."""
    if not HAVE_NUMBA:
        return 1
    limit = max_workers()
    if n is None:
        n = limit
    if n > limit:
        logger.warning("requested %d workers but NUMBA_NUM_THREADS=%d; clamping", n, limit)
        n = limit
    numba.set_num_threads(max(1, int(n)))
    return numba.get_num_threads()
