"""Kernel backend selection.

The hot numeric kernels ship in two variants: numba ``@njit`` loops and a
pure-numpy path. ``SPECCAL_BACKEND`` picks one:

* ``auto`` (default) - numba when importable, numpy otherwise
* ``numba``          - force numba, raise if it is not installed
* ``numpy``          - force the pure-numpy fallback

The choice is made once at import time; both paths compute the same values
(up to floating-point summation order).
"""

import os

try:
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via SPECCAL_BACKEND=numpy
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap

    prange = range


_CHOICE = os.environ.get("SPECCAL_BACKEND", "auto").lower()
if _CHOICE not in ("auto", "numba", "numpy"):
    raise ValueError(f"SPECCAL_BACKEND must be auto|numba|numpy, got {_CHOICE!r}")
if _CHOICE == "numba" and not HAS_NUMBA:
    raise ImportError("SPECCAL_BACKEND=numba but numba is not installed")

USE_NUMBA = HAS_NUMBA if _CHOICE == "auto" else _CHOICE == "numba"


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
