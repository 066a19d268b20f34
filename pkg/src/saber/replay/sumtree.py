"""Sum-tree backend selection.

The compiled kernel is preferred; set ``SABER_PURE_PYTHON=1`` to force the
reference implementation (useful for debugging and for the benchmark).
"""

from __future__ import annotations

import os

from ._sumtree_py import SumTree as PySumTree

CySumTree = None
if not os.environ.get("SABER_PURE_PYTHON"):
    try:
        from ._sumtree_cy import SumTree as CySumTree  # type: ignore[no-redef]
    except ImportError:  # extension not built
        CySumTree = None

SumTree = CySumTree if CySumTree is not None else PySumTree
BACKEND = "cython" if CySumTree is not None else "python"

__all__ = ["SumTree", "PySumTree", "CySumTree", "BACKEND"]
