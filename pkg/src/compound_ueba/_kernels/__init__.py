"""Hot kernels with a compiled backend and a numpy fallback.

The compiled module is used when it was built and ``COMPOUND_UEBA_PURE`` is
not set; ``BACKEND`` names the active implementation.
"""
import os

from . import _deviation_py

BACKENDS = {"numpy": _deviation_py.deviation_series}

try:
    from ._deviation_cy import deviation_series as _cy_series
except ImportError:  # extension not built
    _cy_series = None
else:
    BACKENDS["cython"] = _cy_series

if _cy_series is not None and not os.environ.get("COMPOUND_UEBA_PURE"):
    BACKEND = "cython"
else:
    BACKEND = "numpy"

deviation_series = BACKENDS[BACKEND]

__all__ = ["BACKEND", "BACKENDS", "deviation_series"]
