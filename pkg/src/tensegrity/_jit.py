"""Numba toggle.

Hot kernels are written twice: a loop form compiled with ``numba.njit`` and a
vectorised numpy form.  Setting ``TENSEGRITY_NUMBA=0`` in the environment (or
running without numba installed) selects the numpy path.  The choice is made
once, at import time.
"""

import os

JIT_OPTIONS = {
    "nogil": True,
    "cache": True,
    "fastmath": False,
}


def _numba_requested():
    flag = os.environ.get("TENSEGRITY_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


try:
    if not _numba_requested():
        raise ImportError
    import numba as _nb

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised with TENSEGRITY_NUMBA=0
    _nb = None
    NUMBA_AVAILABLE = False


def njit(func):
    """Compile ``func`` with numba when enabled, else return it untouched."""
    if NUMBA_AVAILABLE:
        return _nb.njit(**JIT_OPTIONS)(func)
    return func


def backend():
    return "numba" if NUMBA_AVAILABLE else "numpy"
