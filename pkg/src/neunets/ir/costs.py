"""Deterministic cost accounting for (sub-)networks.

Conventions, fixed so counts are comparable across runs:
  * one multiply-add counts as 2 FLOPs
  * batch size 1
  * params = trainable tensors only (batch-norm moving stats excluded)
  * memory = 4 bytes per float for every trainable parameter plus every
    layer activation; the raw input activation is charged to the input
    layer's consumer side, i.e. input layers themselves cost nothing,
    which keeps the accounting additive over sequential composition
  * element-wise ops (ReLU, add) cost one FLOP per element; a pooling
    window of size k1*k2 costs k1*k2 per output element; softmax costs
    3 per class (exp, accumulate, divide); dropout, concat and embedding
    lookups cost nothing at inference
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from neunets.errors import GraphValidationError
from neunets.ir.graph import NetworkGraph, infer_shapes


@dataclass(frozen=True)
class CostReport:
    params: int
    flops: int
    memory_bytes: int

    def __add__(self, other: "CostReport") -> "CostReport":
        return CostReport(
            self.params + other.params,
            self.flops + other.flops,
            self.memory_bytes + other.memory_bytes,
        )


def layer_costs(graph: NetworkGraph, layer_id: int,
                shapes: dict[int, tuple] | None = None) -> CostReport:
    """Costs attributable to one layer alone."""
    if shapes is None:
        shapes = infer_shapes(graph)
    spec = graph.layer(layer_id)
    out = shapes[layer_id]
    out_elems = int(np.prod(out))
    kind = spec.kind

    params = 0
    flops = 0
    if kind == "input":
        return CostReport(0, 0, 0)
    if kind == "conv":
        k1, k2 = spec.kernel
        ci = shapes[spec.inputs[0]][2]
        f = int(spec.attrs["filters"])
        oh, ow, _ = out
        bias = f if spec.attrs["use_bias"] else 0
        if spec.attrs["separable"]:
            params = k1 * k2 * ci + ci * f + bias
            flops = 2 * k1 * k2 * ci * oh * ow + 2 * ci * f * oh * ow
        else:
            params = k1 * k2 * ci * f + bias
            flops = 2 * k1 * k2 * ci * f * oh * ow
        if bias:
            flops += oh * ow * f
    elif kind == "dense":
        fan_in = int(np.prod(shapes[spec.inputs[0]]))
        units = int(spec.attrs["units"])
        bias = units if spec.attrs["use_bias"] else 0
        params = fan_in * units + bias
        flops = 2 * fan_in * units + bias
    elif kind == "batch_norm":
        c = out[-1]
        params = 2 * c
        flops = 2 * out_elems
    elif kind == "embedding":
        params = int(spec.attrs["vocab_size"]) * int(spec.attrs["dim"])
        flops = 0
    elif kind == "relu":
        flops = out_elems
    elif kind in ("max_pool", "avg_pool"):
        k1, k2 = spec.kernel
        flops = k1 * k2 * out_elems
    elif kind == "global_pool":
        flops = int(np.prod(shapes[spec.inputs[0]]))
    elif kind == "softmax":
        flops = 3 * out_elems
    elif kind == "add":
        flops = out_elems
    elif kind in ("dropout", "concat"):
        flops = 0
    else:
        raise GraphValidationError(f"no cost model for kind {kind!r}")

    memory = 4 * (params + out_elems)
    return CostReport(int(params), int(flops), int(memory))


def count_costs(graph: NetworkGraph, up_to_layer: int | None = None) -> CostReport:
    """Aggregate costs of the sub-network feeding ``up_to_layer`` (inclusive).

    With ``up_to_layer=None`` the whole graph is counted.
    """
    shapes = infer_shapes(graph)
    if up_to_layer is None:
        included = {spec.id for spec in graph.layers}
    else:
        included = graph.ancestors(up_to_layer)
    total = CostReport(0, 0, 0)
    for spec in graph.layers:
        if spec.id in included:
            total = total + layer_costs(graph, spec.id, shapes)
    return total
