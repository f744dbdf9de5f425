"""Hot numeric kernels, with numba-jitted and pure-numpy implementations.

The backend is picked once at import time from the environment variable
``LAWM_KERNELS``:

* ``auto`` (default) — numba if importable, numpy otherwise
* ``numba``          — require numba, fail loudly if missing
* ``numpy``          — force the pure-numpy fallback

Both backends compute bit-identical results (same dtypes, same operation
order); ``python -m lawm.bench`` times them against each other.
"""
from __future__ import annotations

import os

# fork-safe threading layer available everywhere; parallel kernels only ever
# split disjoint batch partitions, so results do not depend on the layer
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

from . import _numpy_impl

_choice = os.environ.get("LAWM_KERNELS", "auto").lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(f"LAWM_KERNELS must be auto|numba|numpy, got {_choice!r}")

NUMBA_AVAILABLE = False
if _choice in ("auto", "numba"):
    try:
        from . import _numba_impl

        NUMBA_AVAILABLE = True
    except ImportError:
        if _choice == "numba":
            raise
        _numba_impl = None  # type: ignore[assignment]
else:
    _numba_impl = None  # type: ignore[assignment]

BACKEND = "numba" if NUMBA_AVAILABLE else "numpy"
_impl = _numba_impl if NUMBA_AVAILABLE else _numpy_impl

im2col = _impl.im2col
col2im_add = _impl.col2im_add
adam_step = _impl.adam_step
fill_disc = _impl.fill_disc
fill_rect = _impl.fill_rect
fill_segment = _impl.fill_segment

__all__ = [
    "BACKEND",
    "NUMBA_AVAILABLE",
    "im2col",
    "col2im_add",
    "adam_step",
    "fill_disc",
    "fill_rect",
    "fill_segment",
]
