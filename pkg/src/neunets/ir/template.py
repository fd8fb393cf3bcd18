"""Neuro-cell templates and the fixed network skeleton they plug into.

A cell is a small sub-DAG described with local ids 0..n-1; the reserved
input id -1 stands for "whatever feeds this slot".  The skeleton
instantiates the same cell at every slot (slots stay structurally
identical for the whole search), follows each slot with a max-pool,
and closes with global pooling, a fully-connected layer, and softmax.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

from neunets.errors import ConstructionError, GraphValidationError
from neunets.ir.graph import NetworkGraph, infer_shapes, validate_classifier
from neunets.ir.layers import LayerSpec

SLOT_INPUT = -1


@dataclass
class CellLayer:
    local_id: int
    kind: str
    attrs: dict = field(default_factory=dict)
    inputs: list[int] = field(default_factory=list)


@dataclass
class NeuroCell:
    """A reusable sub-DAG template."""

    layers: list[CellLayer] = field(default_factory=list)

    def clone(self) -> "NeuroCell":
        return NeuroCell([
            CellLayer(l.local_id, l.kind, copy.deepcopy(l.attrs), list(l.inputs))
            for l in self.layers
        ])

    def validate(self) -> None:
        ids = [l.local_id for l in self.layers]
        if sorted(ids) != list(range(len(ids))):
            raise GraphValidationError("cell local ids must be 0..n-1")
        known = set(ids) | {SLOT_INPUT}
        for l in self.layers:
            if l.kind == "input":
                raise GraphValidationError("cells cannot contain input layers")
            for i in l.inputs:
                if i not in known:
                    raise GraphValidationError(f"cell layer {l.local_id} references {i}")
        if len(self.exit_ids()) != 1:
            raise GraphValidationError("cell must have exactly one exit layer")

    def exit_ids(self) -> list[int]:
        consumed = {i for l in self.layers for i in l.inputs}
        return [l.local_id for l in self.layers if l.local_id not in consumed]

    def structural_signature(self):
        """Hashable description (kinds, attrs, wiring) ignoring weights."""
        return tuple(
            (l.local_id, l.kind, tuple(sorted(l.attrs.items(), key=lambda kv: kv[0])),
             tuple(l.inputs))
            for l in self.layers
        )


def initial_cell(filters: int = 32, kernel=(3, 3)) -> NeuroCell:
    """The starting cell: one convolution with its activation."""
    return NeuroCell([
        CellLayer(0, "conv", {"filters": filters, "kernel": list(kernel),
                              "stride": 1, "padding": "same"}, [SLOT_INPUT]),
        CellLayer(1, "relu", {}, [0]),
    ])


def _attrs_signature(attrs: dict):
    def norm(v):
        return tuple(v) if isinstance(v, list) else v
    return tuple(sorted((k, norm(v)) for k, v in attrs.items()))


def cell_instances_identical(graph: NetworkGraph) -> bool:
    """True when every recorded cell instance has the same structure.

    Structure means kinds, hyperparameters, and internal wiring by
    position; weights are allowed to differ between instances.
    """
    cells = graph.metadata.get("cells") or []
    if len(cells) < 2:
        return True

    def shape_of(instance):
        pos = {lid: i for i, lid in enumerate(instance)}
        rows = []
        for lid in instance:
            spec = graph.layer(lid)
            wired = tuple(
                pos[i] if i in pos else "ext" for i in spec.inputs
            )
            rows.append((spec.kind, _attrs_signature(spec.attrs), wired))
        return tuple(rows)

    first = shape_of(cells[0])
    return all(shape_of(inst) == first for inst in cells[1:])


def instantiate_template(cell: NeuroCell, dataset_meta: dict, slots: int = 3,
                         pool_kernel=None, head_dropout: float = 0.0) -> NetworkGraph:
    """Build the skeleton: [cell, pool] * slots, global pool, FC, softmax.

    dataset_meta needs ``input_shape`` and ``n_classes``; text datasets
    (rank-1 input of token ids) additionally need ``vocab_size`` and
    ``embed_dim`` and get width-1 pooling windows.
    """
    cell.validate()
    input_shape = tuple(dataset_meta["input_shape"])
    n_classes = int(dataset_meta["n_classes"])
    is_text = len(input_shape) == 1
    if pool_kernel is None:
        pool_kernel = [2, 1] if is_text else [2, 2]

    graph = NetworkGraph(metadata={
        "input_shape": list(input_shape),
        "n_classes": n_classes,
        "cells": [],
    })
    tip = graph.add("input", [])
    if is_text:
        tip = graph.add(
            "embedding", [tip],
            vocab_size=int(dataset_meta["vocab_size"]),
            dim=int(dataset_meta["embed_dim"]),
        )

    for _ in range(slots):
        instance_ids = []
        local_to_global = {SLOT_INPUT: tip}
        for layer in cell.layers:
            gid = graph.add(
                layer.kind,
                [local_to_global[i] for i in layer.inputs],
                **copy.deepcopy(layer.attrs),
            )
            local_to_global[layer.local_id] = gid
            instance_ids.append(gid)
        graph.metadata["cells"].append(instance_ids)
        exit_gid = local_to_global[cell.exit_ids()[0]]
        tip = graph.add("max_pool", [exit_gid], kernel=list(pool_kernel),
                        stride=2, padding="valid")

    tip = graph.add("global_pool", [tip])
    if head_dropout > 0.0:
        tip = graph.add("dropout", [tip], rate=head_dropout)
    tip = graph.add("dense", [tip], units=n_classes)
    graph.add("softmax", [tip])

    try:
        validate_classifier(graph)
        shapes = infer_shapes(graph)
    except GraphValidationError as exc:
        raise ConstructionError(f"template cannot be materialized: {exc}") from exc
    for spec in graph.layers:
        if spec.kind in ("max_pool", "avg_pool") and 0 in shapes[spec.id]:
            raise ConstructionError("pooling exhausted the spatial dimensions")
    return graph


def expand_residual_block(graph: NetworkGraph, tip: int, in_channels: int,
                          filters: int, kernel, stride: int = 1,
                          repeat: int = 1) -> int:
    """Append ``repeat`` residual units and return the new tip id.

    Each unit is conv-BN-ReLU-conv-BN plus a shortcut, joined by add and
    a trailing ReLU.  The shortcut is the identity when shapes allow it;
    otherwise a 1x1 projection convolution matches channels/stride (the
    add operands must agree exactly).  Only the first unit applies the
    stride and the channel change.
    """
    if repeat < 1:
        raise GraphValidationError("repeat must be >= 1")
    k = list(kernel) if isinstance(kernel, (tuple, list)) else [kernel, kernel]
    cur_channels = in_channels
    for r in range(repeat):
        s = stride if r == 0 else 1
        entry = tip
        c = graph.add("conv", [entry], filters=filters, kernel=k, stride=s,
                      padding="same")
        c = graph.add("batch_norm", [c])
        c = graph.add("relu", [c])
        c = graph.add("conv", [c], filters=filters, kernel=k, stride=1,
                      padding="same")
        c = graph.add("batch_norm", [c])
        if cur_channels != filters or s != 1:
            shortcut = graph.add("conv", [entry], filters=filters, kernel=[1, 1],
                                 stride=s, padding="same")
            shortcut = graph.add("batch_norm", [shortcut])
        else:
            shortcut = entry
        tip = graph.add("add", [c, shortcut])
        tip = graph.add("relu", [tip])
        cur_channels = filters
    return tip
