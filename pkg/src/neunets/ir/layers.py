"""Layer specifications: the vocabulary network graphs are built from.

A layer is identified by an integer id, a kind string, a dict of
JSON-serializable hyperparameters, and the ids of its producers.  Kinds
are atomic (one substrate op each); composite structures such as residual
blocks are expanded into these kinds at construction time.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

from neunets.errors import GraphValidationError

# kind -> (min_inputs, max_inputs, required attrs)
KIND_TABLE = {
    "input": (0, 0, ()),
    "conv": (1, 1, ("filters", "kernel", "stride", "padding")),
    "relu": (1, 1, ()),
    "batch_norm": (1, 1, ()),
    "dropout": (1, 1, ("rate",)),
    "max_pool": (1, 1, ("kernel", "stride", "padding")),
    "avg_pool": (1, 1, ("kernel", "stride", "padding")),
    "global_pool": (1, 1, ()),
    "dense": (1, 1, ("units",)),
    "softmax": (1, 1, ()),
    "add": (2, 2, ()),
    "concat": (2, None, ()),
    "embedding": (1, 1, ("vocab_size", "dim")),
}

LAYER_KINDS = frozenset(KIND_TABLE)

# Kinds that carry trainable weights (and therefore serialized tensors).
WEIGHTED_KINDS = frozenset({"conv", "dense", "batch_norm", "embedding"})


def _as_pair(value) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        if len(value) != 2:
            raise GraphValidationError(f"kernel must have 2 entries, got {value!r}")
        return int(value[0]), int(value[1])
    return int(value), int(value)


@dataclass
class LayerSpec:
    """One node of a network DAG."""

    id: int
    kind: str
    attrs: dict = field(default_factory=dict)
    inputs: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KIND_TABLE:
            raise GraphValidationError(f"unknown layer kind {self.kind!r}")
        lo, hi, required = KIND_TABLE[self.kind]
        n = len(self.inputs)
        if n < lo or (hi is not None and n > hi):
            arity = str(lo) if hi == lo else f"{lo}..{hi if hi is not None else 'n'}"
            raise GraphValidationError(
                f"layer {self.id} ({self.kind}) takes {arity} inputs, got {n}"
            )
        for key in required:
            if key not in self.attrs:
                raise GraphValidationError(
                    f"layer {self.id} ({self.kind}) missing attribute {key!r}"
                )
        if "kernel" in self.attrs:
            self.attrs["kernel"] = list(_as_pair(self.attrs["kernel"]))
        if self.kind == "conv":
            self.attrs.setdefault("separable", False)
            self.attrs.setdefault("use_bias", True)
        if self.kind == "dense":
            self.attrs.setdefault("use_bias", True)
        if self.kind == "dropout" and not 0.0 <= float(self.attrs["rate"]) < 1.0:
            raise GraphValidationError(f"dropout rate must be in [0,1), got {self.attrs['rate']}")

    @property
    def kernel(self) -> tuple[int, int]:
        return tuple(self.attrs["kernel"])

    def clone(self) -> "LayerSpec":
        return LayerSpec(self.id, self.kind, copy.deepcopy(self.attrs), list(self.inputs))

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "attrs": self.attrs, "inputs": self.inputs}

    @staticmethod
    def from_dict(d: dict) -> "LayerSpec":
        return LayerSpec(int(d["id"]), d["kind"], dict(d["attrs"]), [int(i) for i in d["inputs"]])
