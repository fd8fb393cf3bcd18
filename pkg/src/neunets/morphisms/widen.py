"""Width-changing transformations and the replication machinery behind them.

Widening a layer from o to o' filters keeps the first o filters and fills
the rest with copies of randomly chosen originals.  Every channel of the
widened output is therefore a copy of some original channel, described by
a replication map m (m[j] = source channel of new channel j).  The map is
pushed through the graph: channel-wise layers (ReLU, pooling, dropout,
batch norm) stay replicated, joins combine maps, and the first layer that
mixes channels (convolution or dense) absorbs the map by dividing each
incoming copy's weights by its replication count — which restores the
original pre-activation sums and leaves the network function unchanged.
"""

from __future__ import annotations

import heapq

import numpy as np

from neunets.errors import MorphismError
from neunets.ir import NetworkGraph, check_weight_shapes, infer_shapes

_PASSTHROUGH = {"relu", "dropout", "max_pool", "avg_pool", "global_pool"}


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def widen_layer(graph: NetworkGraph, layer_id: int, new_width: int,
                rng=None) -> NetworkGraph:
    """Replicate filters of a conv/dense layer up to ``new_width``.

    New filters are drawn uniformly from the existing ones (the run's RNG
    makes the draw reproducible); consumers are rescaled so the network
    computes the same function.
    """
    spec = graph.layer(layer_id)
    if spec.kind == "conv":
        old_width = int(spec.attrs["filters"])
    elif spec.kind == "dense":
        old_width = int(spec.attrs["units"])
    else:
        raise MorphismError(f"cannot widen a {spec.kind!r} layer")
    if new_width <= old_width:
        raise MorphismError(
            f"new width {new_width} must exceed current width {old_width}"
        )
    shapes = infer_shapes(graph)
    g = graph.clone()
    spec = g.layer(layer_id)
    rng = _as_rng(rng)
    m = np.concatenate([
        np.arange(old_width),
        rng.integers(0, old_width, size=new_width - old_width),
    ])

    slots = g.weights[layer_id]
    if spec.kind == "conv":
        if spec.attrs["separable"]:
            slots["wp"] = np.ascontiguousarray(slots["wp"][:, :, :, m])
        else:
            slots["w"] = np.ascontiguousarray(slots["w"][:, :, :, m])
        spec.attrs["filters"] = int(new_width)
    else:
        slots["w"] = np.ascontiguousarray(slots["w"][:, m])
        spec.attrs["units"] = int(new_width)
    if "b" in slots:
        slots["b"] = np.ascontiguousarray(slots["b"][m])

    _propagate_replication(g, layer_id, m, old_width, shapes)
    check_weight_shapes(g)
    g.metadata["last_morphism"] = {
        "op": "widen_layer", "target": int(layer_id),
        "added": [], "removed": [], "map": [int(v) for v in m],
    }
    return g


def widen_kernel(graph: NetworkGraph, layer_id: int, new_kernel) -> NetworkGraph:
    """Zero-pad a convolution's kernel to a larger (odd-step) size.

    The padded taps carry zero weights, so with "same" padding the output
    is untouched.
    """
    spec = graph.layer(layer_id)
    if spec.kind != "conv":
        raise MorphismError(f"cannot widen the kernel of a {spec.kind!r} layer")
    k1, k2 = spec.kernel
    n1, n2 = int(new_kernel[0]), int(new_kernel[1])
    if n1 < k1 or n2 < k2:
        raise MorphismError(f"kernel may not shrink: {k1, k2} -> {n1, n2}")
    if (n1 - k1) % 2 or (n2 - k2) % 2:
        raise MorphismError("kernel growth must preserve center alignment")
    if spec.attrs["padding"] != "same":
        raise MorphismError("kernel widening requires 'same' padding")
    g = graph.clone()
    spec = g.layer(layer_id)
    p1, p2 = (n1 - k1) // 2, (n2 - k2) // 2
    pad = ((p1, p1), (p2, p2))
    slots = g.weights[layer_id]
    if spec.attrs["separable"]:
        slots["wd"] = np.pad(slots["wd"], (*pad, (0, 0)))
    else:
        slots["w"] = np.pad(slots["w"], (*pad, (0, 0), (0, 0)))
    spec.attrs["kernel"] = [n1, n2]
    g.metadata["last_morphism"] = {
        "op": "widen_kernel", "target": int(layer_id), "added": [], "removed": [],
    }
    return g


def adapt_multi_io(graph: NetworkGraph, layer_id: int, change: dict,
                   rng=None) -> NetworkGraph:
    """Apply a width/kernel change at a fan-out (or fan-in) point.

    The replication propagation already walks every consumer path, so a
    multi-consumer layer needs no special casing — this entry point makes
    the contract explicit and validates the descriptor.
    """
    if "new_width" in change:
        return widen_layer(graph, layer_id, int(change["new_width"]), rng=rng)
    if "kernel" in change:
        return widen_kernel(graph, layer_id, change["kernel"])
    raise MorphismError(f"unsupported change descriptor {change!r}")


# ---------------------------------------------------------------------------
# replication propagation


def _propagate_replication(g: NetworkGraph, start: int, m: np.ndarray,
                           old_width: int, shapes: dict) -> None:
    order = g.topological_order()
    pos = {lid: i for i, lid in enumerate(order)}
    cons = g.consumers()
    # frontier: layer id -> (map, original channel count) for layers whose
    # output is currently replicated
    frontier: dict[int, tuple[np.ndarray, int]] = {start: (np.asarray(m), old_width)}
    heap = [(pos[c], c) for c in cons[start]]
    heapq.heapify(heap)
    seen = set()
    replicated_upstream: dict[int, int] = {}
    while heap:
        _, lid = heapq.heappop(heap)
        if lid in seen:
            continue
        seen.add(lid)
        spec = g.layer(lid)
        in_maps = [frontier.get(i) for i in spec.inputs]
        if all(v is None for v in in_maps):
            continue
        kind = spec.kind
        if kind in ("conv", "dense"):
            _absorb(g, spec, in_maps[0], shapes)
            continue
        if kind == "batch_norm":
            mm, ow = in_maps[0]
            for slot in ("gamma", "beta", "mean", "var"):
                g.weights[lid][slot] = np.ascontiguousarray(g.weights[lid][slot][mm])
            frontier[lid] = (mm, ow)
        elif kind in _PASSTHROUGH:
            frontier[lid] = in_maps[0]
        elif kind == "add":
            filled = []
            for i, entry in zip(spec.inputs, in_maps):
                if entry is None:
                    ref = next(e for e in in_maps if e is not None)
                    touched = _replicate_output(g, i, ref[0], replicated_upstream)
                    # everything replicated upstream now emits widened
                    # tensors too, so its remaining consumers must adapt
                    for rid in touched:
                        frontier[rid] = ref
                        for c in cons[rid]:
                            heapq.heappush(heap, (pos[c], c))
                    entry = ref
                filled.append(entry)
            (ma, wa), (mb, wb) = filled
            if wa != wb or not np.array_equal(ma, mb):
                raise MorphismError(
                    f"add {lid} joins incompatibly replicated channels"
                )
            frontier[lid] = (ma, wa)
        elif kind == "concat":
            combined = []
            offset = 0
            for i, entry in zip(spec.inputs, in_maps):
                width = shapes[i][-1]
                if entry is None:
                    combined.append(offset + np.arange(width))
                else:
                    mi, wi = entry
                    if wi != width:
                        raise MorphismError(f"concat {lid} width bookkeeping broken")
                    combined.append(offset + mi)
                offset += width
            frontier[lid] = (np.concatenate(combined), offset)
        else:
            raise MorphismError(
                f"replicated channels reached unsupported layer kind {kind!r}"
            )
        for c in cons[lid]:
            heapq.heappush(heap, (pos[c], c))


def _absorb(g: NetworkGraph, spec, entry, shapes) -> None:
    """Rescale a mixing layer's input axis so replicated channels cancel."""
    mm, old_width = entry
    counts = np.bincount(mm, minlength=old_width).astype(np.float32)
    scale = counts[mm]
    slots = g.weights[spec.id]
    if spec.kind == "conv":
        if spec.attrs["separable"]:
            slots["wd"] = np.ascontiguousarray(slots["wd"][:, :, mm])
            slots["wp"] = np.ascontiguousarray(
                slots["wp"][:, :, mm, :] / scale[None, None, :, None]
            )
        else:
            slots["w"] = np.ascontiguousarray(
                slots["w"][:, :, mm, :] / scale[None, None, :, None]
            )
        return
    # dense: rows follow the flattened input layout (h, w, c) or plain (c,)
    in_shape = shapes[spec.inputs[0]]
    w = slots["w"]
    units = w.shape[1]
    if len(in_shape) == 1:
        slots["w"] = np.ascontiguousarray(w[mm, :] / scale[:, None])
    else:
        h, wdt, _ = in_shape
        w4 = w.reshape(h, wdt, old_width, units)
        w4 = w4[:, :, mm, :] / scale[None, None, :, None]
        slots["w"] = np.ascontiguousarray(w4.reshape(-1, units))


def _replicate_output(g: NetworkGraph, lid: int, mm: np.ndarray,
                      visited: dict[int, int]) -> list[int]:
    """Make ``lid``'s output replicated by ``mm`` (used for add joins).

    Walks upstream through channel-wise layers until it can replicate a
    producing conv/dense layer's filters; unlike widening this introduces
    no rescaling, because the join's downstream absorber divides once for
    the whole joined tensor.  Returns every layer whose output is now
    replicated, so the caller can adapt their remaining consumers.
    """
    key = hash((lid, mm.tobytes()))
    if visited.get(lid) == key:
        return []
    if lid in visited:
        raise MorphismError(f"layer {lid} needs two different replications")
    visited[lid] = key
    spec = g.layer(lid)
    kind = spec.kind
    if kind == "conv":
        slots = g.weights[lid]
        if spec.attrs["separable"]:
            slots["wp"] = np.ascontiguousarray(slots["wp"][:, :, :, mm])
        else:
            slots["w"] = np.ascontiguousarray(slots["w"][:, :, :, mm])
        if "b" in slots:
            slots["b"] = np.ascontiguousarray(slots["b"][mm])
        spec.attrs["filters"] = int(len(mm))
        return [lid]
    if kind == "dense":
        slots = g.weights[lid]
        slots["w"] = np.ascontiguousarray(slots["w"][:, mm])
        if "b" in slots:
            slots["b"] = np.ascontiguousarray(slots["b"][mm])
        spec.attrs["units"] = int(len(mm))
        return [lid]
    if kind == "batch_norm":
        for slot in ("gamma", "beta", "mean", "var"):
            g.weights[lid][slot] = np.ascontiguousarray(g.weights[lid][slot][mm])
        return [lid] + _replicate_output(g, spec.inputs[0], mm, visited)
    if kind in _PASSTHROUGH:
        return [lid] + _replicate_output(g, spec.inputs[0], mm, visited)
    if kind == "add":
        touched = [lid]
        for i in spec.inputs:
            touched += _replicate_output(g, i, mm, visited)
        return touched
    raise MorphismError(f"cannot replicate output of layer kind {kind!r}")
