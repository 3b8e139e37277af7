"""Kernel selection: compiled extension if available, numpy fallback otherwise.

Set ICLSEL_PURE_PYTHON=1 to force the fallback for a whole run. The
benchmark bypasses this dispatch and imports both implementations directly.
"""

from __future__ import annotations

import os

from . import _bm25_py

if os.environ.get("ICLSEL_PURE_PYTHON") == "1":
    _impl = _bm25_py
    KERNEL_BACKEND = "python"
else:
    try:
        from . import _bm25_kernel as _impl  # type: ignore[attr-defined]

        KERNEL_BACKEND = "cython"
    except ImportError:
        _impl = _bm25_py
        KERNEL_BACKEND = "python"

score_all = _impl.score_all
