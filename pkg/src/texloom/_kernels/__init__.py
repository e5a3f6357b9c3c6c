"""Kernel backend selection: compiled extension if available, NumPy otherwise.

Set TEXLOOM_PURE_PYTHON=1 to force the NumPy fallback. Both backends are
numerically identical (see tests/test_backends.py); `BACKEND` reports which
one was loaded.
"""

import os

if os.environ.get("TEXLOOM_PURE_PYTHON"):
    from . import _reference as _impl
else:
    try:
        from . import _native as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _reference as _impl

BACKEND = _impl.BACKEND
raster_triangles = _impl.raster_triangles
bake_triangles = _impl.bake_triangles
knn_fill = _impl.knn_fill

__all__ = ["BACKEND", "raster_triangles", "bake_triangles", "knn_fill"]
