"""Depth- and topology-changing transformations.

All of them initialize the new weights so the network function is
untouched: identity kernels for deepening, zero kernels for skip paths,
and exact filter splits for branching.
"""

from __future__ import annotations

import numpy as np

from neunets.errors import ForbiddenPositionError, MorphismError
from neunets.ir import NetworkGraph, infer_shapes

_SIGN_PRESERVING = {"max_pool", "avg_pool", "global_pool", "dropout"}


def nonneg_guaranteed(graph: NetworkGraph, layer_id: int) -> bool:
    """Whether a layer's output is non-negative for every possible input.

    ReLU (and softmax) outputs qualify; pooling, dropout, concatenation
    and addition preserve the property; anything that can produce signed
    values (raw inputs, convolutions, dense layers, batch norm) does not.
    """
    spec = graph.layer(layer_id)
    if spec.kind in ("relu", "softmax"):
        return True
    if spec.kind in _SIGN_PRESERVING:
        return nonneg_guaranteed(graph, spec.inputs[0])
    if spec.kind in ("add", "concat"):
        return all(nonneg_guaranteed(graph, i) for i in spec.inputs)
    return False


def _rewire(g: NetworkGraph, consumer_ids, old: int, new: int) -> None:
    for cid in consumer_ids:
        spec = g.layer(cid)
        spec.inputs = [new if i == old else i for i in spec.inputs]


def deepen(graph: NetworkGraph, position: int, kernel=(3, 3),
           separable: bool = False) -> NetworkGraph:
    """Insert an identity-initialized convolution (plus ReLU) after a layer.

    The kernel holds the identity at its center and zeros elsewhere, so
    the convolution reproduces its input; the trailing ReLU is harmless
    exactly when the input is already non-negative, which is why insertion
    is only allowed after activation-safe positions — in particular never
    right after the network input, whose values may be negative.
    """
    k1, k2 = int(kernel[0]), int(kernel[1])
    if k1 % 2 == 0 or k2 % 2 == 0:
        raise MorphismError(f"identity kernel needs odd dimensions, got {k1}x{k2}")
    shapes = infer_shapes(graph)
    out_shape = shapes[position]
    if len(out_shape) != 3:
        raise MorphismError("deepening requires a spatial (rank-3) tensor")
    if not nonneg_guaranteed(graph, position):
        raise ForbiddenPositionError(
            f"layer {position} may emit negative values; an identity "
            "convolution followed by ReLU would not preserve them"
        )
    g = graph.clone()
    channels = out_shape[2]
    downstream = g.consumers()[position]
    conv_id = g.add("conv", [position], filters=channels, kernel=[k1, k2],
                    stride=1, padding="same", separable=separable)
    relu_id = g.add("relu", [conv_id])
    _rewire(g, downstream, position, relu_id)

    if separable:
        wd = np.zeros((k1, k2, channels), dtype=np.float32)
        wd[k1 // 2, k2 // 2, :] = 1.0
        wp = np.eye(channels, dtype=np.float32).reshape(1, 1, channels, channels)
        g.weights[conv_id] = {"wd": wd, "wp": wp,
                              "b": np.zeros(channels, dtype=np.float32)}
    else:
        w = np.zeros((k1, k2, channels, channels), dtype=np.float32)
        w[k1 // 2, k2 // 2] = np.eye(channels, dtype=np.float32)
        g.weights[conv_id] = {"w": w, "b": np.zeros(channels, dtype=np.float32)}

    g.metadata["last_morphism"] = {
        "op": "deepen", "target": int(position),
        "added": [conv_id, relu_id], "removed": [],
    }
    return g


def insert_skip(graph: NetworkGraph, source_layer: int,
                new_conv_spec: dict | None = None) -> NetworkGraph:
    """Bypass a new zero-initialized convolution with an additive skip.

    Consumers of the source now read add(conv(source), source).  The conv
    contributes nothing initially, so the function is unchanged, yet its
    weights receive gradient through the add from the first step on.
    """
    new_conv_spec = dict(new_conv_spec or {})
    kernel = new_conv_spec.pop("kernel", (3, 3))
    shapes = infer_shapes(graph)
    src_shape = shapes[source_layer]
    if len(src_shape) != 3:
        raise MorphismError("skip insertion requires a spatial (rank-3) tensor")
    channels = src_shape[2]
    filters = int(new_conv_spec.pop("filters", channels))
    if filters != channels:
        raise MorphismError(
            f"skip conv must keep {channels} channels to match the add, "
            f"got {filters}"
        )
    if new_conv_spec:
        raise MorphismError(f"unknown conv options {sorted(new_conv_spec)}")
    k1, k2 = int(kernel[0]), int(kernel[1])
    g = graph.clone()
    downstream = g.consumers()[source_layer]
    conv_id = g.add("conv", [source_layer], filters=channels, kernel=[k1, k2],
                    stride=1, padding="same")
    add_id = g.add("add", [conv_id, source_layer])
    _rewire(g, downstream, source_layer, add_id)
    g.weights[conv_id] = {
        "w": np.zeros((k1, k2, channels, channels), dtype=np.float32),
        "b": np.zeros(channels, dtype=np.float32),
    }
    g.metadata["last_morphism"] = {
        "op": "insert_skip", "target": int(source_layer),
        "added": [conv_id, add_id], "removed": [],
    }
    return g


def branch(graph: NetworkGraph, layer_id: int) -> NetworkGraph:
    """Split a convolution into two parallel halves merged by concatenation.

    Filters [0, o/2) go left, [o/2, o) go right, and the concat restores
    the original channel order, so no parameters are added and the output
    is unchanged.  When the convolution feeds exactly one ReLU, the ReLU
    is folded into both branches (ReLU commutes with concat); later
    insertions inside a branch then sit behind an activation, which keeps
    them eligible for identity-initialized deepening.
    """
    spec = graph.layer(layer_id)
    if spec.kind != "conv":
        raise MorphismError(f"can only branch convolutions, not {spec.kind!r}")
    if spec.attrs["separable"]:
        raise MorphismError(
            "branching a separable convolution would duplicate its "
            "depthwise parameters"
        )
    o = int(spec.attrs["filters"])
    if o < 2:
        raise MorphismError("branching needs at least 2 filters")
    lo = o // 2

    g = graph.clone()
    spec = g.layer(layer_id)
    cons = g.consumers()
    direct = cons[layer_id]
    fold_relu = (
        len(direct) == 1 and g.layer(direct[0]).kind == "relu"
    )
    tail_id = direct[0] if fold_relu else layer_id
    downstream = cons[tail_id] if fold_relu else direct

    base_attrs = dict(spec.attrs)
    w = g.weights[layer_id]
    left = g.add("conv", list(spec.inputs), **{**base_attrs, "filters": lo})
    right = g.add("conv", list(spec.inputs), **{**base_attrs, "filters": o - lo})
    g.weights[left] = {"w": np.ascontiguousarray(w["w"][..., :lo])}
    g.weights[right] = {"w": np.ascontiguousarray(w["w"][..., lo:])}
    if "b" in w:
        g.weights[left]["b"] = np.ascontiguousarray(w["b"][:lo])
        g.weights[right]["b"] = np.ascontiguousarray(w["b"][lo:])

    if fold_relu:
        left_out = g.add("relu", [left])
        right_out = g.add("relu", [right])
        added = [left, right, left_out, right_out]
    else:
        left_out, right_out = left, right
        added = [left, right]
    merge = g.add("concat", [left_out, right_out])
    added.append(merge)

    _rewire(g, downstream, tail_id, merge)
    removed = [layer_id]
    if fold_relu:
        g.remove_layer(tail_id)
        removed.append(tail_id)
    g.remove_layer(layer_id)

    g.metadata["last_morphism"] = {
        "op": "branch", "target": int(layer_id),
        "added": added, "removed": removed,
        "split": [lo, o - lo],
    }
    return g
