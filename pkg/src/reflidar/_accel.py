"""Backend selection for the hot kernels.

Kernels are written twice: a loop version that numba compiles, and a
vectorized numpy version. Set ``REFLIDAR_DISABLE_NUMBA=1`` to force the
numpy path (also used automatically when numba is not importable).
"""

import os

_DISABLE = os.environ.get("REFLIDAR_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _DISABLE


def jit(fn):
    """Compile ``fn`` with numba in nopython mode, caching to disk."""
    if not HAVE_NUMBA:
        raise RuntimeError("numba is not available")
    return numba.njit(cache=True, nogil=True)(fn)


def pick(loop_fn, numpy_fn):
    """Return the jitted loop kernel or the numpy fallback per the env flag."""
    if USE_NUMBA:
        return jit(loop_fn)
    return numpy_fn


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
