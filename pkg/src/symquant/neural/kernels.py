"""Histogram kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy
implementation. Set ``SYMQUANT_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _histogram_py

VARIANTS = {"hard": 0, "soft": 1, "softrbf": 2, "sigmoid": 3}

_impl = _histogram_py
if os.environ.get("SYMQUANT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _histogram_cy as _impl  # noqa: F811
    except ImportError:  # extension not built
        _impl = _histogram_py

BACKEND = _impl.BACKEND
hist_forward = _impl.hist_forward
hist_backward = _impl.hist_backward


def backends():
    """All importable implementations, keyed by name."""
    out = {"python": _histogram_py}
    try:
        from . import _histogram_cy
        out["cython"] = _histogram_cy
    except ImportError:
        pass
    return out
