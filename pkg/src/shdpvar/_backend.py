"""Selects numba-compiled kernels or the pure-numpy fallback.

Set ``SHDPVAR_NUMBA=0`` before import to force the numpy path.
"""
import os

_requested = os.environ.get("SHDPVAR_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = _requested and HAVE_NUMBA


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
