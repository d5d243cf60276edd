"""Hot kernels with a compiled backend and a numpy fallback.

The Cython extension is used when it was built; otherwise the numpy
implementation is loaded. Set ``AMIWATCH_PURE_PYTHON=1`` to force the
fallback.
"""
import os

from . import _py

if os.environ.get("AMIWATCH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _py
else:
    try:
        from . import _ext as _impl
    except ImportError:  # extension not built
        _impl = _py

BACKEND = _impl.BACKEND
build_histograms = _impl.build_histograms
best_split = _impl.best_split
predict_forest = _impl.predict_forest
upgma = _impl.upgma


def available_backends():
    """Map backend name to module for every backend importable here."""
    out = {"python": _py}
    try:
        from . import _ext
    except ImportError:
        pass
    else:
        out["cython"] = _ext
    return out


__all__ = ["BACKEND", "available_backends", "best_split", "build_histograms",
           "predict_forest", "upgma"]
