"""Kernel dispatch: the compiled extension when available, numpy otherwise.

Set ``ARTIFACT_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
march_squares = _kernels_py.march_squares
mehler_table = _kernels_py.mehler_table

if os.environ.get("ARTIFACT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        BACKEND = "compiled"
        march_squares = _compiled.march_squares
        mehler_table = _compiled.mehler_table

multi_indices = _kernels_py.multi_indices
index_of = _kernels_py.index_of
contingency_tables = _kernels_py.contingency_tables

__all__ = ["BACKEND", "march_squares", "mehler_table", "multi_indices", "index_of",
           "contingency_tables"]
