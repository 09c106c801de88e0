"""Hot numeric kernels, numba-compiled unless SEMSLAM_NO_NUMBA=1.

Both paths run the same source (`_impl.py`); the env flag exists for
debugging and for machines without a working numba. `BACKEND` reports
which path is active.
"""

import os

from . import _impl
from ._impl import BIG

__all__ = ["lap_solve", "systematic_resample", "mahalanobis_sq", "ransac_best_mask", "BIG", "BACKEND"]

_disabled = os.environ.get("SEMSLAM_NO_NUMBA", "").strip() in ("1", "true", "yes")

if not _disabled:
    try:
        from numba import njit

        lap_solve = njit(cache=True)(_impl.lap_solve)
        systematic_resample = njit(cache=True)(_impl.systematic_resample)
        mahalanobis_sq = njit(cache=True)(_impl.mahalanobis_sq)
        ransac_best_mask = njit(cache=True)(_impl.ransac_best_mask)
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        lap_solve = _impl.lap_solve
        systematic_resample = _impl.systematic_resample
        mahalanobis_sq = _impl.mahalanobis_sq
        ransac_best_mask = _impl.ransac_best_mask
        BACKEND = "numpy"
else:
    lap_solve = _impl.lap_solve
    systematic_resample = _impl.systematic_resample
    mahalanobis_sq = _impl.mahalanobis_sq
    ransac_best_mask = _impl.ransac_best_mask
    BACKEND = "numpy"
