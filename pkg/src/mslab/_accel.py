"""Backend selection for the hot kernels.

numba is used when importable unless ``MSLAB_DISABLE_NUMBA`` is set to a truthy
value; the pure-numpy path is always available and produces the same numbers
up to floating-point summation order.
"""

import os
import warnings

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_OPTS = {"cache": True, "nogil": True}

_TRUTHY = {"1", "true", "yes", "on"}


def _env_disabled():
    return os.environ.get("MSLAB_DISABLE_NUMBA", "").strip().lower() in _TRUTHY


HAS_NUMBA = numba is not None
_backend = "numba" if HAS_NUMBA and not _env_disabled() else "numpy"


def njit(func):
    if numba is None:
        return func
    return numba.njit(func, **NUMBA_OPTS)


def backend():
    return _backend


def set_backend(name):
    """Switch between ``"numba"`` and ``"numpy"``; returns the previous backend."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    previous, _backend = _backend, name
    return previous


def set_threads(n):
    if numba is not None and n:
        # the first call initializes the threading layer, which may warn about TBB
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", numba.NumbaWarning)
            numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
