"""Kernel selection: the compiled extension when available, numpy otherwise.

Set ``CHAINBENCH_PURE_PYTHON=1`` to force the numpy implementation.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("CHAINBENCH_PURE_PYTHON"):
    impl = _kernels_py
else:
    try:
        from . import _kernels as impl  # type: ignore[no-redef]
    except ImportError:
        impl = _kernels_py

IMPLEMENTATION: str = impl.IMPLEMENTATION
tree_forward = impl.tree_forward
tree_propagate = impl.tree_propagate
tree_propagate_max = impl.tree_propagate_max
tree_update = impl.tree_update
lipschitz_dp = impl.lipschitz_dp
farthest_point = impl.farthest_point

__all__ = [
    "IMPLEMENTATION",
    "tree_forward",
    "tree_propagate",
    "tree_propagate_max",
    "tree_update",
    "lipschitz_dp",
    "farthest_point",
]
