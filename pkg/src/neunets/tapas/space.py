"""Random chain architectures and their translation into network graphs.

A chain is a JSON-able list of layer descriptors.  Convolutions draw
stride from {1, 2}, receptive field from {3, .., 256} capped at the
current feature-map size, and padding from {same, valid}; residual
blocks additionally draw a repeat factor from 1..6; a skip connection's
only hyperparameter is the earlier layer it reconnects to.  Illegal
draws (a pool on a 1-pixel map, a skip with no shape-compatible target)
are resampled.

``lower_chain`` expands descriptors into substrate layers and appends
the fixed ending block — a global pooling and a fully connected
classifier — that every sampled network shares.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from neunets import ir, nn
from neunets.errors import GraphValidationError

# the seven descriptor kinds the encoder knows how to represent
CHAIN_KINDS = ("conv", "pool", "batch_norm", "dropout", "residual", "skip", "fc")


@dataclass(frozen=True)
class SearchSpace:
    """Hyperparameter domains for the chain sampler."""

    strides: tuple = (1, 2)
    rf_min: int = 3
    rf_max: int = 256
    paddings: tuple = ("same", "valid")
    filters: tuple = (8, 16, 32, 64)
    pool_sizes: tuple = (2, 3)
    dropout_rates: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    repeat_min: int = 1
    repeat_max: int = 6
    min_layers: int = 1
    max_layers: int = 8
    kinds: tuple = ("conv", "pool", "batch_norm", "dropout", "residual", "skip")

    def __post_init__(self):
        if self.repeat_min < 1 or self.repeat_max < self.repeat_min:
            raise ValueError("repeat bounds must satisfy 1 <= min <= max")
        if self.min_layers < 1 or self.max_layers < self.min_layers:
            raise ValueError("layer bounds must satisfy 1 <= min <= max")
        for k in self.kinds:
            if k not in CHAIN_KINDS:
                raise ValueError(f"unknown chain kind {k!r}")


def _shape_after(shape: tuple, desc: dict, row_shapes: list) -> tuple:
    """Output shape of one descriptor given its input shape."""
    kind = desc["kind"]
    if kind in ("batch_norm", "dropout"):
        return shape
    if kind == "skip":
        return shape
    if kind == "fc":
        return (int(desc["units"]),)
    h, w, _ = shape
    if kind == "conv":
        rf, s, p = desc["receptive_field"], desc["stride"], desc["padding"]
        return (nn.conv_output_dim(h, rf, s, p),
                nn.conv_output_dim(w, rf, s, p), desc["filters"])
    if kind == "pool":
        k = desc["size"]
        return (nn.conv_output_dim(h, k, 2, "valid"),
                nn.conv_output_dim(w, k, 2, "valid"), shape[2])
    if kind == "residual":
        s = desc["stride"]
        return (nn.conv_output_dim(h, 1, s, "same"),
                nn.conv_output_dim(w, 1, s, "same"), desc["filters"])
    raise GraphValidationError(f"unknown layer kind {kind!r}")


def _skip_targets(row_shapes: list) -> list[int]:
    """Earlier row indices a skip at the current position may connect to.

    The immediately preceding row is excluded (it is already connected);
    spatial dimensions must match the current map so the join needs at
    most a channel projection.
    """
    cur = row_shapes[-1]
    if len(cur) != 3:
        return []
    return [
        j for j in range(len(row_shapes) - 1)
        if len(row_shapes[j]) == 3 and row_shapes[j][:2] == cur[:2]
    ]


def _legal(kind: str, row_shapes: list, space: SearchSpace) -> bool:
    cur = row_shapes[-1]
    if kind in ("batch_norm", "dropout"):
        return True
    if kind == "skip":
        return bool(_skip_targets(row_shapes))
    if len(cur) != 3:
        return False
    if kind in ("conv", "residual"):
        return min(cur[0], cur[1]) >= space.rf_min
    if kind == "pool":
        return min(cur[0], cur[1]) >= min(space.pool_sizes)
    return False


def _draw(kind: str, rng, row_shapes: list, space: SearchSpace) -> dict:
    cur = row_shapes[-1]
    if kind == "batch_norm":
        return {"kind": "batch_norm"}
    if kind == "dropout":
        return {"kind": "dropout",
                "rate": float(rng.choice(space.dropout_rates))}
    if kind == "skip":
        return {"kind": "skip", "from": int(rng.choice(_skip_targets(row_shapes)))}
    if kind == "pool":
        sizes = [k for k in space.pool_sizes if k <= min(cur[0], cur[1])]
        return {
            "kind": "pool",
            "op": "max" if rng.integers(0, 2) else "avg",
            "size": int(rng.choice(sizes)),
        }
    cap = min(space.rf_max, cur[0], cur[1])
    rf = int(rng.integers(space.rf_min, cap + 1))
    desc = {
        "kind": kind,
        "receptive_field": rf,
        "stride": int(rng.choice(space.strides)),
        "filters": int(rng.choice(space.filters)),
    }
    if kind == "conv":
        desc["padding"] = str(rng.choice(space.paddings))
    else:
        desc["repeat"] = int(rng.integers(space.repeat_min, space.repeat_max + 1))
    return desc


def sample_search_space(rng, input_shape=(32, 32, 3),
                        space: SearchSpace | None = None) -> list[dict]:
    """Draw one legal chain; every hyperparameter stays inside its domain."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    space = space or SearchSpace()
    length = int(rng.integers(space.min_layers, space.max_layers + 1))
    row_shapes = [tuple(int(d) for d in input_shape)]
    chain: list[dict] = []
    for _ in range(length):
        for _attempt in range(1000):
            kind = str(rng.choice(space.kinds))
            if _legal(kind, row_shapes, space):
                break
        else:  # pragma: no cover - batch_norm is always legal
            raise RuntimeError("no legal layer kind found")
        desc = _draw(kind, rng, row_shapes, space)
        chain.append(desc)
        row_shapes.append(_shape_after(row_shapes[-1], desc, row_shapes))
    return chain


# ---------------------------------------------------------------------------
# lowering


def _lower_residual(g: ir.NetworkGraph, prev: int, in_c: int, desc: dict) -> list[int]:
    """Expand a residual descriptor into `repeat` shortcut blocks.

    Stride and the projection shortcut apply to the first block only;
    later blocks see matching shapes and use identity shortcuts.
    """
    ids: list[int] = []
    k, f = desc["receptive_field"], desc["filters"]
    for rep in range(desc["repeat"]):
        stride = desc["stride"] if rep == 0 else 1
        entry = prev
        c1 = g.add("conv", [entry], filters=f, kernel=(k, k),
                   stride=stride, padding="same")
        b1 = g.add("batch_norm", [c1])
        r1 = g.add("relu", [b1])
        c2 = g.add("conv", [r1], filters=f, kernel=(k, k),
                   stride=1, padding="same")
        b2 = g.add("batch_norm", [c2])
        ids += [c1, b1, r1, c2, b2]
        if rep == 0 and (stride != 1 or in_c != f):
            sc = g.add("conv", [entry], filters=f, kernel=(1, 1),
                       stride=stride, padding="same")
            ids.append(sc)
        else:
            sc = entry
        a = g.add("add", [b2, sc])
        r = g.add("relu", [a])
        ids += [a, r]
        prev = r
    return ids


def lower_chain(chain: list, input_shape, n_classes: int) -> ir.NetworkGraph:
    """Expand a chain into a validated classifier graph.

    The graph always ends in the fixed block: global pooling into a
    fully connected layer over the classes (when the body already left
    spatial structure behind via an ``fc`` descriptor, the pooling stage
    is skipped).  ``metadata["chain_blocks"]`` records the substrate
    layer ids of every descriptor, in chain order, so callers can map
    descriptor-level questions (costs, cut points) onto the graph.
    """
    g = ir.NetworkGraph(metadata={
        "input_shape": tuple(int(d) for d in input_shape),
        "n_classes": int(n_classes),
    })
    prev = g.add("input", [])
    row_last = [prev]
    row_shapes = [tuple(int(d) for d in input_shape)]
    blocks: list[list[int]] = []

    for desc in chain:
        kind = desc.get("kind")
        ids: list[int] = []
        if kind == "conv":
            rf = desc["receptive_field"]
            c = g.add("conv", [prev], filters=desc["filters"], kernel=(rf, rf),
                      stride=desc["stride"], padding=desc["padding"])
            r = g.add("relu", [c])
            ids, prev = [c, r], r
        elif kind == "pool":
            k = desc["size"]
            p = g.add(f"{desc['op']}_pool", [prev], kernel=(k, k),
                      stride=2, padding="valid")
            ids, prev = [p], p
        elif kind == "batch_norm":
            b = g.add("batch_norm", [prev])
            ids, prev = [b], b
        elif kind == "dropout":
            d = g.add("dropout", [prev], rate=desc["rate"])
            ids, prev = [d], d
        elif kind == "residual":
            ids = _lower_residual(g, prev, row_shapes[-1][2], desc)
            prev = ids[-1]
        elif kind == "skip":
            src_row = desc["from"]
            if not 0 <= src_row < len(row_last) - 1:
                raise GraphValidationError(
                    f"skip target {src_row} is not an earlier layer"
                )
            src = row_last[src_row]
            if row_shapes[src_row][:2] != row_shapes[-1][:2]:
                raise GraphValidationError(
                    f"skip target {src_row} has incompatible spatial shape"
                )
            if row_shapes[src_row][2] != row_shapes[-1][2]:
                src = g.add("conv", [src], filters=row_shapes[-1][2],
                            kernel=(1, 1), stride=1, padding="same")
                ids.append(src)
            a = g.add("add", [prev, src])
            ids.append(a)
            prev = a
        elif kind == "fc":
            d = g.add("dense", [prev], units=desc["units"])
            r = g.add("relu", [d])
            ids, prev = [d, r], r
        else:
            raise GraphValidationError(f"unknown layer kind {kind!r}")
        row_last.append(prev)
        row_shapes.append(_shape_after(row_shapes[-1], desc, row_shapes))
        blocks.append(ids)

    if len(row_shapes[-1]) == 3:
        prev = g.add("global_pool", [prev])
    head = g.add("dense", [prev], units=int(n_classes))
    g.add("softmax", [head])

    g.metadata["chain_blocks"] = blocks
    ir.validate_classifier(g)
    return g


def chain_cut_ids(graph: ir.NetworkGraph) -> list[int]:
    """Last substrate layer id of each descriptor — the incremental cut points."""
    return [block[-1] for block in graph.metadata["chain_blocks"]]
