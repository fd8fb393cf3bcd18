"""Joint architecture + training-hyperparameter configurations.

A configuration is sampled as a JSON-able *genome* in one of four model
representations and decoded into a network graph:

* plain chain — components of conv stacks, each component closed by a
  pooling layer;
* skip chain — the plain chain plus additive skips that never cross a
  pooling boundary;
* multi-branch — a sequence of fixed two-branch cells whose branches are
  merged by channel concatenation;
* hierarchy — level-1 primitive operations assembled into level-2
  motifs, which a level-3 sequence of motif references assembles into
  the final network.

Every genome also carries the learning dimensions (learning rate,
weight decay, momentum), making the search joint over architecture and
optimizer settings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from neunets import ir, nn
from neunets.errors import GraphValidationError

REPRESENTATIONS = ("plain-chain", "skip-chain", "multi-branch", "hierarchy")

LEVEL1_OPS = ("conv3", "conv5", "sep_conv3", "max_pool3", "identity")


@dataclass(frozen=True)
class ConfigSpace:
    representations: tuple = REPRESENTATIONS
    components: tuple = (1, 2, 3)
    stacks_per_component: tuple = (1, 2, 3, 4)
    kernel_sizes: tuple = (3, 5)
    conv_types: tuple = ("standard", "separable")
    channels: tuple = (8, 16, 32)
    learning_rates: tuple = (0.1, 0.03, 0.01, 0.003, 0.001)
    weight_decays: tuple = (0.0, 1e-4, 1e-3)
    momenta: tuple = (0.0, 0.9)
    batch_size: int = 64
    level1_ops: tuple = LEVEL1_OPS
    n_level2_motifs: int = 4
    level2_sizes: tuple = (2, 3)
    level3_sizes: tuple = (2, 3, 4)

    def __post_init__(self):
        for rep in self.representations:
            if rep not in REPRESENTATIONS:
                raise ValueError(f"unknown representation {rep!r}")
        for name in ("components", "stacks_per_component", "kernel_sizes",
                     "channels", "level2_sizes", "level3_sizes"):
            values = getattr(self, name)
            if not values or any(int(v) < 1 for v in values):
                raise ValueError(f"{name} must be positive and non-empty")
        for op in self.level1_ops:
            if op not in LEVEL1_OPS:
                raise ValueError(f"unknown level-1 operation {op!r}")
        if self.n_level2_motifs < 1:
            raise ValueError("need at least one level-2 motif")


def _pick(rng: np.random.Generator, values):
    return values[int(rng.integers(len(values)))]


def _sample_learning(space: ConfigSpace, rng) -> dict:
    return {
        "learning_rate": float(_pick(rng, space.learning_rates)),
        "weight_decay": float(_pick(rng, space.weight_decays)),
        "momentum": float(_pick(rng, space.momenta)),
    }


def _sample_stack(space: ConfigSpace, rng) -> dict:
    return {
        "kernel": int(_pick(rng, space.kernel_sizes)),
        "type": str(_pick(rng, space.conv_types)),
        "channels": int(_pick(rng, space.channels)),
    }


def sample_genome(space: ConfigSpace, representation: str,
                  rng: np.random.Generator) -> dict:
    """One random configuration in the given representation, as plain JSON."""
    if representation not in space.representations:
        raise ValueError(f"representation {representation!r} not in the space")
    genome = {"representation": representation,
              "learning": _sample_learning(space, rng)}

    if representation in ("plain-chain", "skip-chain"):
        components = []
        for _ in range(_pick(rng, space.components)):
            stacks = [_sample_stack(space, rng)
                      for _ in range(_pick(rng, space.stacks_per_component))]
            comp = {"stacks": stacks}
            if representation == "skip-chain":
                comp["skips"] = []
                if len(stacks) >= 3 and rng.random() < 0.5:
                    i = int(rng.integers(0, len(stacks) - 2))
                    j = int(rng.integers(i + 2, len(stacks)))
                    comp["skips"] = [[i, j]]
            components.append(comp)
        genome["components"] = components
    elif representation == "multi-branch":
        genome["cells"] = [
            {
                "channels": int(_pick(rng, space.channels)),
                "branches": [
                    {"kernel": int(_pick(rng, space.kernel_sizes)),
                     "type": str(_pick(rng, space.conv_types))}
                    for _ in range(2)
                ],
            }
            for _ in range(_pick(rng, space.components))
        ]
    elif representation == "hierarchy":
        genome["channels"] = int(_pick(rng, space.channels))
        genome["level2"] = [
            [str(_pick(rng, space.level1_ops))
             for _ in range(_pick(rng, space.level2_sizes))]
            for _ in range(space.n_level2_motifs)
        ]
        genome["level3"] = [int(rng.integers(space.n_level2_motifs))
                            for _ in range(_pick(rng, space.level3_sizes))]
    return genome


def optimizer_from_genome(genome: dict, batch_size: int = 64) -> nn.OptimizerConfig:
    learning = genome["learning"]
    return nn.OptimizerConfig(
        kind="sgd_momentum",
        learning_rate=learning["learning_rate"],
        momentum=learning["momentum"],
        weight_decay=learning["weight_decay"],
        batch_size=batch_size,
    )


# ---------------------------------------------------------------------------
# decoding


def _conv_block(g: ir.NetworkGraph, prev: int, kernel: int, channels: int,
                conv_type: str) -> list[int]:
    c = g.add("conv", [prev], filters=channels, kernel=(kernel, kernel),
              stride=1, padding="same", separable=(conv_type == "separable"))
    b = g.add("batch_norm", [c])
    r = g.add("relu", [b])
    return [c, b, r]


def _close(g: ir.NetworkGraph, prev: int, n_classes: int) -> None:
    pooled = g.add("global_pool", [prev])
    head = g.add("dense", [pooled], units=int(n_classes))
    g.add("softmax", [head])


def _decode_chain(g, genome, prev):
    """Plain or skip chain body; returns per-component layer ids."""
    components = []
    for comp in genome["components"]:
        ids = []
        outs = []  # (layer id, channels) of each stack output
        for stack in comp["stacks"]:
            block = _conv_block(g, prev, stack["kernel"], stack["channels"],
                                stack["type"])
            ids.extend(block)
            prev = block[-1]
            outs.append((prev, stack["channels"]))
            for i, j in comp.get("skips", []):
                if j != len(outs) - 1:
                    continue
                if not 0 <= i < j - 1:
                    raise GraphValidationError(
                        f"skip [{i}, {j}] does not reach back past the "
                        "previous stack"
                    )
                src, src_ch = outs[i]
                if src_ch != stack["channels"]:
                    src = g.add("conv", [src], filters=stack["channels"],
                                kernel=(1, 1), stride=1, padding="same")
                    ids.append(src)
                prev = g.add("add", [prev, src])
                ids.append(prev)
        pool = g.add("max_pool", [prev], kernel=(2, 2), stride=2,
                     padding="valid")
        ids.append(pool)
        prev = pool
        components.append(ids)
    return components, prev


def _decode_cells(g, genome, prev):
    cells = []
    for cell in genome["cells"]:
        entry = prev
        ids = []
        branch_outs = []
        for branch in cell["branches"]:
            block = _conv_block(g, entry, branch["kernel"], cell["channels"],
                                branch["type"])
            ids.extend(block)
            branch_outs.append(block[-1])
        merged = g.add("concat", branch_outs)
        pool = g.add("max_pool", [merged], kernel=(2, 2), stride=2,
                     padding="valid")
        ids.extend([merged, pool])
        prev = pool
        cells.append(ids)
    return cells, prev


def _decode_hierarchy(g, genome, prev):
    channels = int(genome["channels"])
    level2 = genome["level2"]
    stem = _conv_block(g, prev, 3, channels, "standard")
    prev = stem[-1]
    motifs = [stem]
    for idx in genome["level3"]:
        if not 0 <= idx < len(level2):
            raise GraphValidationError(
                f"level-3 motif reference {idx} outside the level-2 table"
            )
        ids = []
        for op in level2[idx]:
            if op == "identity":
                continue
            if op == "conv3":
                block = _conv_block(g, prev, 3, channels, "standard")
            elif op == "conv5":
                block = _conv_block(g, prev, 5, channels, "standard")
            elif op == "sep_conv3":
                block = _conv_block(g, prev, 3, channels, "separable")
            elif op == "max_pool3":
                block = [g.add("max_pool", [prev], kernel=(3, 3), stride=1,
                               padding="same")]
            else:
                raise GraphValidationError(f"unknown level-1 operation {op!r}")
            ids.extend(block)
            prev = block[-1]
        motifs.append(ids)
    return motifs, prev


def decode_genome(genome: dict, input_shape, n_classes: int) -> ir.NetworkGraph:
    """Expand a genome into a validated classifier graph.

    ``metadata`` records the per-component (or per-cell, per-motif) layer
    ids so representation constraints stay checkable on the decoded
    graph.
    """
    g = ir.NetworkGraph(metadata={
        "input_shape": tuple(int(d) for d in input_shape),
        "n_classes": int(n_classes),
        "genome": genome,
    })
    prev = g.add("input", [])
    representation = genome.get("representation")
    if representation in ("plain-chain", "skip-chain"):
        g.metadata["components"], last = _decode_chain(g, genome, prev)
    elif representation == "multi-branch":
        g.metadata["branch_cells"], last = _decode_cells(g, genome, prev)
    elif representation == "hierarchy":
        g.metadata["motifs"], last = _decode_hierarchy(g, genome, prev)
    else:
        raise GraphValidationError(f"unknown representation {representation!r}")
    _close(g, last, n_classes)
    ir.validate_classifier(g)
    return g


def sample_config(space: ConfigSpace, representation: str,
                  rng: np.random.Generator, input_shape=(32, 32, 3),
                  n_classes: int = 10):
    """(graph, optimizer) for one random valid configuration.

    Draws that do not decode at this input shape (e.g. more pooling
    stages than the spatial size supports) are resampled.
    """
    for _ in range(100):
        genome = sample_genome(space, representation, rng)
        try:
            graph = decode_genome(genome, input_shape, n_classes)
        except GraphValidationError:
            continue
        return graph, optimizer_from_genome(genome, space.batch_size)
    raise GraphValidationError(
        f"no decodable {representation!r} configuration found for input "
        f"shape {tuple(input_shape)}"
    )
