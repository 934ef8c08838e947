"""Matcher kernels with a compiled fast path.

The Cython extension is selected at import when it is built; otherwise the
pure-Python implementation is used. Set CAPTIONRL_PURE_PYTHON=1 to force
the fallback (used by tests and the kernel benchmark).
"""

from __future__ import annotations

import os

from . import pure

if os.environ.get("CAPTIONRL_PURE_PYTHON"):
    _impl = pure
    BACKEND = "pure"
else:
    try:
        from . import _matchkernel as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = pure
        BACKEND = "pure"

contains_ids = _impl.contains_ids
batch_contains = _impl.batch_contains

__all__ = ["BACKEND", "batch_contains", "contains_ids", "pure"]
