"""Hot loops: brute-force distances, nearest neighbours, neighbourhood counts.

Two interchangeable backends implement the same functions:

* ``numba`` -- compiled, row-parallel loops (default when numba imports);
* ``numpy`` -- blocked, vectorised fallback.

Set ``LIGER_DISABLE_NUMBA=1`` to force the numpy path. Callers pass
contiguous float64 rows; cosine rows must already be unit-normalised.
"""

import os

from . import _numpy

_NAMES = (
    "nearest_in_support",
    "assign_nearest",
    "radius_counts",
    "knn_indices",
    "witness_distance",
    "max_pairwise_distance",
)


def _numba_disabled():
    return os.environ.get("LIGER_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


def _load_numba():
    try:
        import numba

        # the default layer probes TBB first and warns on old installs
        if "NUMBA_THREADING_LAYER" not in os.environ:
            numba.config.THREADING_LAYER = "omp"
        from . import _numba
    except ImportError:
        return None
    return _numba


_numba_mod = None if _numba_disabled() else _load_numba()
BACKEND = "numba" if _numba_mod is not None else "numpy"


def get_backend(name):
    """Return the kernel module for ``name`` (``"numba"`` or ``"numpy"``)."""
    if name == "numpy":
        return _numpy
    if name == "numba":
        mod = _numba_mod or _load_numba()
        if mod is None:
            raise ImportError("numba backend requested but numba is not importable")
        return mod
    raise ValueError(f"unknown kernel backend {name!r}")


def set_threads(n):
    """Cap worker threads used by the compiled backend (no-op for numpy)."""
    if n is None or _numba_mod is None:
        return
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


_active = get_backend(BACKEND)
nearest_in_support = _active.nearest_in_support
assign_nearest = _active.assign_nearest
radius_counts = _active.radius_counts
knn_indices = _active.knn_indices
witness_distance = _active.witness_distance
max_pairwise_distance = _active.max_pairwise_distance

__all__ = ["BACKEND", "get_backend", "set_threads", *_NAMES]
