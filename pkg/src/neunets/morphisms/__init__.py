"""Function-preserving network transformations.

Every operation returns a new graph computing the same function as the
input graph (verifiable with ``verify_function_preserving``), while
changing its capacity: wider layers, bigger kernels, more depth, skip
paths, or parallel branches.
"""

from neunets.morphisms.widen import adapt_multi_io, widen_kernel, widen_layer
from neunets.morphisms.insert import branch, deepen, insert_skip, nonneg_guaranteed
from neunets.morphisms.verify import verify_function_preserving

__all__ = [
    "adapt_multi_io",
    "branch",
    "deepen",
    "insert_skip",
    "nonneg_guaranteed",
    "verify_function_preserving",
    "widen_kernel",
    "widen_layer",
]
