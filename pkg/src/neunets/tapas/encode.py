"""Layer-pair feature vectors for the accuracy predictor.

Each chain row gets a 14-entry vector: a one-hot over the seven
descriptor kinds, the output/input height and depth ratios, the
descriptor's own trainable-parameter count, the number of layers from
the input, the cumulative inference FLOPs and memory of the sub-network
so far, and an accuracy field.  Composite descriptors (residual blocks,
convolutions with their activation) contribute the aggregate cost of
their expanded substrate layers.

The predictor consumes rows two at a time: the earlier row carries the
known (or previously predicted) prefix accuracy, the later row's
accuracy field is always zero.
"""

from __future__ import annotations

import numpy as np

from neunets import ir
from neunets.errors import GraphValidationError
from neunets.tapas.space import CHAIN_KINDS, lower_chain

N_FEATURES = 14
# feature indices
ONE_HOT = slice(0, 7)
H_RATIO, D_RATIO, N_WEIGHTS, N_LAYERS, FLOPS, MEMORY, ACCURACY = range(7, 14)

_KIND_INDEX = {kind: i for i, kind in enumerate(CHAIN_KINDS)}


def _height(shape: tuple) -> int:
    return int(shape[0]) if len(shape) == 3 else 1


def _depth(shape: tuple) -> int:
    return int(shape[-1])


def encoding_rows(chain: list, input_shape, n_classes: int) -> np.ndarray:
    """Raw (unstandardized) feature rows: the input pseudo-layer plus one
    row per descriptor.  Accuracy fields are left at zero; they are
    filled in per pair.

    The input row is the only one whose type block is all zero — there
    is no descriptor kind for it.
    """
    graph = lower_chain(chain, input_shape, n_classes)
    shapes = ir.infer_shapes(graph)
    blocks = graph.metadata["chain_blocks"]

    rows = np.zeros((len(chain) + 1, N_FEATURES), dtype=np.float64)
    rows[0, H_RATIO] = 1.0
    rows[0, D_RATIO] = 1.0

    in_shape = tuple(int(d) for d in input_shape)
    flops = 0
    memory = 0
    for i, (desc, block) in enumerate(zip(chain, blocks), start=1):
        kind = desc.get("kind")
        if kind not in _KIND_INDEX:
            raise GraphValidationError(f"unknown layer kind {kind!r}")
        costs = [ir.layer_costs(graph, lid, shapes) for lid in block]
        out_shape = shapes[block[-1]]
        flops += sum(c.flops for c in costs)
        memory += sum(c.memory_bytes for c in costs)

        row = rows[i]
        row[_KIND_INDEX[kind]] = 1.0
        row[H_RATIO] = _height(out_shape) / _height(in_shape)
        row[D_RATIO] = _depth(out_shape) / _depth(in_shape)
        row[N_WEIGHTS] = sum(c.params for c in costs)
        row[N_LAYERS] = i
        row[FLOPS] = flops
        row[MEMORY] = memory
        in_shape = out_shape
    return rows


def encode_pair(rows: np.ndarray, index: int, a_prev: float,
                stats=None) -> np.ndarray:
    """The (l_i, l_{i+1}) input pair for one predictor evaluation.

    ``index`` addresses l_i (0 is the input pseudo-layer, whose accuracy
    is seeded with 1/N_c by the caller); the accuracy field of l_{i+1}
    is always zero.  With ``stats`` — a (mean, std) pair of (2, 14)
    arrays — the result is feature-wise standardized.
    """
    if not 0 <= index < len(rows) - 1:
        raise GraphValidationError(
            f"pair index {index} outside 0..{len(rows) - 2}"
        )
    pair = rows[index:index + 2].copy()
    pair[0, ACCURACY] = a_prev
    pair[1, ACCURACY] = 0.0
    if stats is not None:
        mean, std = stats
        pair = (pair - mean) / std
    return pair
