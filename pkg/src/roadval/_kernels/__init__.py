"""Hot per-ring kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; set
``ROADVAL_PURE_PYTHON=1`` to force the fallback.  ``BACKEND`` names the
active implementation.
"""

from __future__ import annotations

import os

from . import _fallback

if os.environ.get("ROADVAL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

knn_mean_distance = _impl.knn_mean_distance
ring_median = _impl.ring_median
smoothness_walk = _impl.smoothness_walk
project_to_pixels = _impl.project_to_pixels
pair_angles = _fallback.pair_angles


def backends() -> dict:
    """All importable backends by name, for comparison tests and benchmarks."""
    out = {"python": _fallback}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
