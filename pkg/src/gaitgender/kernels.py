"""Backend selection for the numeric kernels.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
NumPy implementations in ``_kernels_py`` are used. Setting the environment
variable ``GAITGENDER_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("GAITGENDER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

frame_anchors = _impl.frame_anchors
apply_anchors = _impl.apply_anchors
fill_gaps = _impl.fill_gaps
resample_linear = _impl.resample_linear
knn_cosine = _impl.knn_cosine

__all__ = [
    "BACKEND",
    "frame_anchors",
    "apply_anchors",
    "fill_gaps",
    "resample_linear",
    "knn_cosine",
]
