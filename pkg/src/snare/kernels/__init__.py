"""Brute-force combinatorial kernels used by the verification oracles.

The compiled extension is preferred; the pure-Python module is selected
when it is unavailable or when ``SNARE_PURE_PYTHON`` is set.
"""

import os

from . import _pykernels as python_backend

compiled_backend = None
if not os.environ.get("SNARE_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled_backend  # type: ignore[no-redef]
    except ImportError:
        compiled_backend = None

_active = compiled_backend or python_backend
BACKEND = "compiled" if compiled_backend is not None else "python"

quorum_masks = python_backend.quorum_masks
min_pair_overlap = _active.min_pair_overlap
max_undetected = _active.max_undetected

__all__ = ["BACKEND", "max_undetected", "min_pair_overlap", "quorum_masks",
           "python_backend", "compiled_backend"]
