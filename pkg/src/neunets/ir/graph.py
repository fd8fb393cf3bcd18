"""Network graphs: DAGs of layer specs plus their weight tensors.

Graphs are value-semantic.  Every structural transformation starts from
``graph.clone()`` and returns the copy, so graphs can be handed across
worker threads without locking.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from neunets import nn
from neunets.errors import DimensionError, GraphValidationError
from neunets.ir.layers import LayerSpec, WEIGHTED_KINDS


@dataclass
class NetworkGraph:
    """An ordered list of layers, their weights, and dataset metadata.

    metadata keys:
      input_shape  per-example shape, e.g. (64, 64, 3) or (200,) for token ids
      n_classes    output dimensionality of the classifier head
      cells        optional list of per-slot layer-id lists (template bookkeeping)
    """

    layers: list[LayerSpec] = field(default_factory=list)
    weights: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    # -- structure access ---------------------------------------------------

    def layer(self, layer_id: int) -> LayerSpec:
        for spec in self.layers:
            if spec.id == layer_id:
                return spec
        raise GraphValidationError(f"no layer with id {layer_id}")

    def has_layer(self, layer_id: int) -> bool:
        return any(spec.id == layer_id for spec in self.layers)

    def next_id(self) -> int:
        return 1 + max((spec.id for spec in self.layers), default=-1)

    def add(self, kind: str, inputs: list[int], **attrs) -> int:
        """Append a new layer and return its id."""
        for i in inputs:
            if not self.has_layer(i):
                raise GraphValidationError(f"input id {i} does not exist")
        new = LayerSpec(self.next_id(), kind, attrs, list(inputs))
        self.layers.append(new)
        return new.id

    def remove_layer(self, layer_id: int) -> None:
        """Drop a layer nothing references anymore (its weights included)."""
        for spec in self.layers:
            if layer_id in spec.inputs:
                raise GraphValidationError(
                    f"layer {layer_id} is still consumed by {spec.id}"
                )
        if not self.has_layer(layer_id):
            raise GraphValidationError(f"no layer with id {layer_id}")
        self.layers = [spec for spec in self.layers if spec.id != layer_id]
        self.weights.pop(layer_id, None)

    def consumers(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {spec.id: [] for spec in self.layers}
        for spec in self.layers:
            for i in spec.inputs:
                out[i].append(spec.id)
        return out

    def sinks(self) -> list[int]:
        cons = self.consumers()
        return [i for i, c in cons.items() if not c]

    def input_ids(self) -> list[int]:
        return [spec.id for spec in self.layers if spec.kind == "input"]

    def topological_order(self) -> list[int]:
        """Kahn's algorithm over the inputs relation; raises on cycles."""
        ids = {spec.id for spec in self.layers}
        indeg = {spec.id: len(spec.inputs) for spec in self.layers}
        for spec in self.layers:
            for i in spec.inputs:
                if i not in ids:
                    raise GraphValidationError(
                        f"layer {spec.id} references missing input {i}"
                    )
        ready = sorted(i for i, d in indeg.items() if d == 0)
        cons = self.consumers()
        order: list[int] = []
        while ready:
            cur = ready.pop(0)
            order.append(cur)
            for nxt in cons[cur]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    ready.append(nxt)
        if len(order) != len(self.layers):
            raise GraphValidationError("graph contains a cycle")
        return order

    def ancestors(self, layer_id: int) -> set[int]:
        """All layers the given one depends on, itself included."""
        seen = {layer_id}
        stack = [layer_id]
        while stack:
            for i in self.layer(stack.pop()).inputs:
                if i not in seen:
                    seen.add(i)
                    stack.append(i)
        return seen

    def clone(self) -> "NetworkGraph":
        return NetworkGraph(
            layers=[spec.clone() for spec in self.layers],
            weights={
                lid: {slot: t.copy() for slot, t in slots.items()}
                for lid, slots in self.weights.items()
            },
            metadata=copy.deepcopy(self.metadata),
        )

    def parameter_count(self) -> int:
        return int(sum(t.size for slots in self.weights.values() for t in slots.values()))


# ---------------------------------------------------------------------------
# validation and shape inference


def validate_graph(graph: NetworkGraph) -> None:
    """Structural checks: unique ids, arity, acyclicity, shape consistency."""
    ids = [spec.id for spec in graph.layers]
    if len(set(ids)) != len(ids):
        raise GraphValidationError("duplicate layer ids")
    graph.topological_order()
    infer_shapes(graph)


def validate_classifier(graph: NetworkGraph) -> None:
    """A classifier additionally has one input, one softmax sink of size N_c."""
    validate_graph(graph)
    if len(graph.input_ids()) != 1:
        raise GraphValidationError("classifier must have exactly one input layer")
    sinks = graph.sinks()
    if len(sinks) != 1:
        raise GraphValidationError(f"classifier must have exactly one output, got {len(sinks)}")
    sink = graph.layer(sinks[0])
    if sink.kind != "softmax":
        raise GraphValidationError("classifier output must be a softmax layer")
    n_classes = graph.metadata.get("n_classes")
    shape = infer_shapes(graph)[sink.id]
    if n_classes is not None and shape != (int(n_classes),):
        raise GraphValidationError(
            f"output dimension {shape} does not match n_classes={n_classes}"
        )


def _dense_fan_in(shape: tuple) -> int:
    return int(np.prod(shape))


def infer_shapes(graph: NetworkGraph) -> dict[int, tuple]:
    """Per-example output shape of every layer (no batch dimension)."""
    shapes: dict[int, tuple] = {}
    for lid in graph.topological_order():
        spec = graph.layer(lid)
        ins = [shapes[i] for i in spec.inputs]
        shapes[lid] = _infer_one(graph, spec, ins)
    return shapes


def _infer_one(graph: NetworkGraph, spec: LayerSpec, ins: list[tuple]) -> tuple:
    kind = spec.kind
    if kind == "input":
        shape = graph.metadata.get("input_shape")
        if shape is None:
            raise GraphValidationError("metadata lacks input_shape")
        return tuple(int(d) for d in shape)
    if kind == "embedding":
        (src,) = ins
        if len(src) != 1:
            raise GraphValidationError(f"embedding expects (tokens,) input, got {src}")
        return (src[0], 1, int(spec.attrs["dim"]))
    if kind == "conv":
        (src,) = ins
        if len(src) != 3:
            raise GraphValidationError(f"conv {spec.id} needs a rank-3 input, got {src}")
        h, w, _ = src
        k1, k2 = spec.kernel
        s, p = int(spec.attrs["stride"]), spec.attrs["padding"]
        try:
            oh = nn.conv_output_dim(h, k1, s, p)
            ow = nn.conv_output_dim(w, k2, s, p)
        except DimensionError as exc:
            raise GraphValidationError(f"conv {spec.id}: {exc}") from exc
        return (oh, ow, int(spec.attrs["filters"]))
    if kind in ("max_pool", "avg_pool"):
        (src,) = ins
        if len(src) != 3:
            raise GraphValidationError(f"pool {spec.id} needs a rank-3 input, got {src}")
        h, w, c = src
        k1, k2 = spec.kernel
        s, p = int(spec.attrs["stride"]), spec.attrs["padding"]
        try:
            oh = nn.conv_output_dim(h, k1, s, p)
            ow = nn.conv_output_dim(w, k2, s, p)
        except DimensionError as exc:
            raise GraphValidationError(f"pool {spec.id}: {exc}") from exc
        return (oh, ow, c)
    if kind == "global_pool":
        (src,) = ins
        if len(src) != 3:
            raise GraphValidationError(f"global_pool {spec.id} needs rank-3 input, got {src}")
        return (src[2],)
    if kind == "dense":
        (src,) = ins
        return (int(spec.attrs["units"]),)
    if kind in ("relu", "batch_norm", "dropout"):
        return ins[0]
    if kind == "softmax":
        (src,) = ins
        if len(src) != 1:
            raise GraphValidationError(f"softmax {spec.id} needs a rank-1 input, got {src}")
        return src
    if kind == "add":
        a, b = ins
        if a != b:
            raise GraphValidationError(f"add {spec.id} inputs differ: {a} vs {b}")
        return a
    if kind == "concat":
        base = ins[0]
        if len(base) == 1:
            if any(len(s) != 1 for s in ins):
                raise GraphValidationError(f"concat {spec.id} mixes ranks")
            return (sum(s[0] for s in ins),)
        for s in ins:
            if len(s) != 3 or s[:2] != base[:2]:
                raise GraphValidationError(
                    f"concat {spec.id} spatial dims differ: {ins}"
                )
        return (base[0], base[1], sum(s[2] for s in ins))
    raise GraphValidationError(f"unknown kind {kind!r}")


def check_weight_shapes(graph: NetworkGraph) -> None:
    """Verify stored tensors match the shapes the layer specs imply."""
    shapes = infer_shapes(graph)
    for spec in graph.layers:
        if spec.kind not in WEIGHTED_KINDS or spec.id not in graph.weights:
            continue
        slots = graph.weights[spec.id]
        expected: dict[str, tuple] = {}
        if spec.kind == "conv":
            k1, k2 = spec.kernel
            ci = shapes[spec.inputs[0]][2]
            f = int(spec.attrs["filters"])
            if spec.attrs["separable"]:
                expected = {"wd": (k1, k2, ci), "wp": (1, 1, ci, f)}
            else:
                expected = {"w": (k1, k2, ci, f)}
            if spec.attrs["use_bias"]:
                expected["b"] = (f,)
        elif spec.kind == "dense":
            fan_in = _dense_fan_in(shapes[spec.inputs[0]])
            units = int(spec.attrs["units"])
            expected = {"w": (fan_in, units)}
            if spec.attrs["use_bias"]:
                expected["b"] = (units,)
        elif spec.kind == "batch_norm":
            c = shapes[spec.inputs[0]][-1]
            expected = {s: (c,) for s in ("gamma", "beta", "mean", "var")}
        elif spec.kind == "embedding":
            expected = {"table": (int(spec.attrs["vocab_size"]), int(spec.attrs["dim"]))}
        for slot, shape in expected.items():
            got = slots.get(slot)
            if got is None or tuple(got.shape) != shape:
                raise GraphValidationError(
                    f"layer {spec.id} ({spec.kind}) slot {slot!r}: expected "
                    f"shape {shape}, stored "
                    f"{None if got is None else tuple(got.shape)}"
                )


# ---------------------------------------------------------------------------
# weight initialization


def initialize_weights(graph: NetworkGraph, seed: int = 0) -> NetworkGraph:
    """He-normal conv/dense kernels, unit batch-norm, zero biases (in place)."""
    rng = np.random.default_rng(seed)
    shapes = infer_shapes(graph)
    for lid in graph.topological_order():
        spec = graph.layer(lid)
        if spec.kind not in WEIGHTED_KINDS:
            continue
        graph.weights[lid] = _init_layer(graph, spec, shapes, rng)
    return graph


def _init_layer(graph, spec, shapes, rng) -> dict[str, np.ndarray]:
    kind = spec.kind
    in_shape = shapes[spec.inputs[0]] if spec.inputs else None
    if kind == "conv":
        k1, k2 = spec.kernel
        ci = in_shape[2]
        f = int(spec.attrs["filters"])
        slots: dict[str, np.ndarray] = {}
        if spec.attrs["separable"]:
            slots["wd"] = nn.he_normal_init((k1, k2, ci), fan_in=k1 * k2, seed=rng)
            slots["wp"] = nn.he_normal_init((1, 1, ci, f), fan_in=ci, seed=rng)
        else:
            slots["w"] = nn.he_normal_init((k1, k2, ci, f), fan_in=k1 * k2 * ci, seed=rng)
        if spec.attrs["use_bias"]:
            slots["b"] = nn.zeros_init((f,))
        return slots
    if kind == "dense":
        fan_in = _dense_fan_in(in_shape)
        units = int(spec.attrs["units"])
        slots = {"w": nn.he_normal_init((fan_in, units), fan_in=fan_in, seed=rng)}
        if spec.attrs["use_bias"]:
            slots["b"] = nn.zeros_init((units,))
        return slots
    if kind == "batch_norm":
        c = in_shape[-1]
        return {
            "gamma": np.ones(c, dtype=np.float32),
            "beta": np.zeros(c, dtype=np.float32),
            "mean": np.zeros(c, dtype=np.float32),
            "var": np.ones(c, dtype=np.float32),
        }
    if kind == "embedding":
        vocab, dim = int(spec.attrs["vocab_size"]), int(spec.attrs["dim"])
        return {"table": nn.uniform_init((vocab, dim), low=-0.05, high=0.05, seed=rng)}
    raise GraphValidationError(f"kind {kind!r} carries no weights")


# ---------------------------------------------------------------------------
# evaluation


def evaluate(graph, x, training: bool = False, rng=None):
    """Forward pass; returns softmax probabilities (or the single sink output)."""
    out, _ = evaluate_with_tape(graph, x, training=training, rng=rng)
    return out


def evaluate_with_tape(graph, x, training: bool = False, rng=None,
                       frozen=frozenset()):
    """Forward pass that records per-layer caches for a later backward call.

    ``x`` is a batched array for single-input graphs or a dict
    {input_layer_id: array} when the graph has several inputs.  Layers in
    ``frozen`` run in eval mode even during training, so frozen batch-norm
    stats stay put and frozen dropout is the identity.
    """
    order = graph.topological_order()
    input_ids = graph.input_ids()
    if isinstance(x, dict):
        feeds = {int(k): v for k, v in x.items()}
    else:
        if len(input_ids) != 1:
            raise DimensionError(
                f"graph has {len(input_ids)} inputs; pass a dict of arrays"
            )
        feeds = {input_ids[0]: x}
    acts: dict[int, np.ndarray] = {}
    caches: dict[int, object] = {}
    for lid in order:
        spec = graph.layer(lid)
        ins = [acts[i] for i in spec.inputs]
        mode = bool(training) and lid not in frozen
        acts[lid], caches[lid] = _forward_one(graph, spec, ins, feeds, mode, rng)
    sinks = graph.sinks()
    tape = {"order": order, "caches": caches, "acts": acts, "sinks": sinks}
    if len(sinks) == 1:
        return acts[sinks[0]], tape
    return {s: acts[s] for s in sinks}, tape


def _forward_one(graph, spec, ins, feeds, training, rng):
    kind = spec.kind
    w = graph.weights.get(spec.id, {})
    if kind == "input":
        if spec.id not in feeds:
            raise DimensionError(f"no feed for input layer {spec.id}")
        arr = feeds[spec.id]
        expect = tuple(graph.metadata.get("input_shape", arr.shape[1:]))
        if tuple(arr.shape[1:]) != expect:
            raise DimensionError(
                f"input shape {arr.shape[1:]} does not match metadata {expect}"
            )
        return arr, None
    if kind == "conv":
        if spec.attrs["separable"]:
            y, cache = nn.separable_conv_forward(
                ins[0], w["wd"], w["wp"], w.get("b"),
                stride=int(spec.attrs["stride"]), padding=spec.attrs["padding"],
            )
        else:
            y, cache = nn.conv_forward(
                ins[0], w["w"], w.get("b"),
                stride=int(spec.attrs["stride"]), padding=spec.attrs["padding"],
            )
        return y, cache
    if kind == "relu":
        return nn.relu_forward(ins[0])
    if kind == "batch_norm":
        return nn.batchnorm_forward(
            ins[0], w["gamma"], w["beta"], w["mean"], w["var"], training
        )
    if kind == "dropout":
        return nn.dropout_forward(ins[0], float(spec.attrs["rate"]), training, rng)
    if kind == "max_pool":
        return nn.maxpool_forward(
            ins[0], k=spec.kernel, stride=int(spec.attrs["stride"]),
            padding=spec.attrs["padding"],
        )
    if kind == "avg_pool":
        return nn.avgpool_forward(
            ins[0], k=spec.kernel, stride=int(spec.attrs["stride"]),
            padding=spec.attrs["padding"],
        )
    if kind == "global_pool":
        return nn.global_avgpool_forward(ins[0])
    if kind == "dense":
        flat = ins[0].reshape(ins[0].shape[0], -1)
        y, cache = nn.dense_forward(flat, w["w"], w.get("b"))
        return y, (cache, ins[0].shape)
    if kind == "softmax":
        return nn.softmax_forward(ins[0])
    if kind == "add":
        if ins[0].shape != ins[1].shape:
            raise DimensionError(f"add {spec.id} operand shapes differ")
        return ins[0] + ins[1], None
    if kind == "concat":
        splits = [a.shape[-1] for a in ins]
        return np.concatenate(ins, axis=-1), splits
    if kind == "embedding":
        y, cache = nn.embedding_forward(w["table"], ins[0])
        n, t, d = y.shape
        return y.reshape(n, t, 1, d), (cache, (n, t, d))
    raise GraphValidationError(f"unknown kind {kind!r}")


def backward(graph, tape, d_output=None, d_presoftmax=None):
    """Reverse pass over a tape; returns {layer_id: {slot: gradient}}.

    ``d_output`` seeds the sink layer's gradient.  For cross-entropy
    training pass ``d_presoftmax`` instead: it seeds the gradient *below*
    the final softmax (the combined softmax+NLL gradient), which avoids
    dividing by near-zero probabilities.
    """
    order, caches = tape["order"], tape["caches"]
    dacts: dict[int, np.ndarray] = {}
    skip: set[int] = set()
    if d_presoftmax is not None:
        (sink_id,) = tape["sinks"]
        sink = graph.layer(sink_id)
        if sink.kind != "softmax":
            raise DimensionError("d_presoftmax requires a softmax sink")
        dacts[sink.inputs[0]] = nn.as_f32(d_presoftmax)
        skip.add(sink_id)
    elif d_output is not None:
        for sid in tape["sinks"]:
            dacts[sid] = nn.as_f32(d_output if len(tape["sinks"]) == 1 else d_output[sid])
    else:
        raise DimensionError("backward needs d_output or d_presoftmax")

    grads: dict[int, dict[str, np.ndarray]] = {}
    for lid in reversed(order):
        if lid in skip or lid not in dacts:
            continue
        spec = graph.layer(lid)
        dy = dacts.pop(lid)
        dins, wgrads = _backward_one(graph, spec, caches[lid], dy, tape)
        if wgrads:
            grads[lid] = wgrads
        for i, dx in zip(spec.inputs, dins):
            if dx is None:
                continue
            if i in dacts:
                dacts[i] = dacts[i] + dx
            else:
                dacts[i] = dx
    return grads


def _backward_one(graph, spec, cache, dy, tape):
    kind = spec.kind
    if kind == "input":
        return [], {}
    if kind == "conv":
        if spec.attrs["separable"]:
            dx, dwd, dwp, db = nn.separable_conv_backward(cache, dy)
            g = {"wd": dwd, "wp": dwp}
        else:
            dx, dw, db = nn.conv_backward(cache, dy)
            g = {"w": dw}
        if db is not None:
            g["b"] = db
        return [dx], g
    if kind == "relu":
        return [nn.relu_backward(cache, dy)], {}
    if kind == "batch_norm":
        dx, dgamma, dbeta = nn.batchnorm_backward(cache, dy)
        return [dx], {"gamma": dgamma, "beta": dbeta}
    if kind == "dropout":
        return [nn.dropout_backward(cache, dy)], {}
    if kind == "max_pool":
        return [nn.maxpool_backward(cache, dy)], {}
    if kind == "avg_pool":
        return [nn.avgpool_backward(cache, dy)], {}
    if kind == "global_pool":
        return [nn.global_avgpool_backward(cache, dy)], {}
    if kind == "dense":
        inner, in_shape = cache
        dx, dw, db = nn.dense_backward(inner, dy)
        g = {"w": dw}
        if db is not None:
            g["b"] = db
        return [dx.reshape(in_shape)], g
    if kind == "softmax":
        return [nn.softmax_backward(cache, dy)], {}
    if kind == "add":
        return [dy, dy], {}
    if kind == "concat":
        splits = np.cumsum(cache[:-1])
        return list(np.split(dy, splits, axis=-1)), {}
    if kind == "embedding":
        inner, (n, t, d) = cache
        dtable = nn.embedding_backward(inner, dy.reshape(n, t, d))
        return [None], {"table": dtable}
    raise GraphValidationError(f"unknown kind {kind!r}")
