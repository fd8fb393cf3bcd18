"""The mutation catalogue: function-preserving edits applied to every cell.

Each mutation transforms all recorded cell instances identically —
same edit, same hyperparameters, same random draws — so the instances
stay structurally interchangeable.  Inapplicable draws (for example
branching a one-filter convolution) surface as MorphismError and the
caller resamples.
"""

from __future__ import annotations

import math

import numpy as np

from neunets import ir, morphisms as mo
from neunets.errors import MorphismError

MUTATION_KINDS = (
    "insert_conv",
    "branch_insert_conv",
    "insert_skip",
    "alter_filters",
    "alter_units",
    "alter_kernel",
)


def _update_instance(instance, record):
    removed = set(record.get("removed", ()))
    kept = [lid for lid in instance if lid not in removed]
    return kept + [int(i) for i in record.get("added", ())]


def _for_each_instance(graph, step):
    """Run ``step`` once per cell instance, keeping the id lists current.

    ``step(graph, idx)`` applies one or more morphisms to instance ``idx``
    and returns ``(new_graph, change_records)``.
    """
    n_instances = len(graph.metadata.get("cells") or [])
    if n_instances == 0:
        raise MorphismError("graph records no cell instances")
    for idx in range(n_instances):
        graph, records = step(graph, idx)
        instance = graph.metadata["cells"][idx]
        for record in records:
            instance = _update_instance(instance, record)
        graph.metadata["cells"][idx] = instance
    return graph


def _canonical(graph):
    cells = graph.metadata.get("cells") or []
    if not cells:
        raise MorphismError("graph records no cell instances")
    return cells[0]


def _conv_positions(graph, *, branchable=False):
    out = []
    for j, lid in enumerate(_canonical(graph)):
        spec = graph.layer(lid)
        if spec.kind != "conv":
            continue
        if branchable and (spec.attrs["separable"]
                           or int(spec.attrs["filters"]) < 2):
            continue
        out.append(j)
    return out


def _default_kernel(graph):
    # width-1 feature maps (text) need width-1 kernels to stay meaningful
    shape = tuple(graph.metadata.get("input_shape") or ())
    return (3, 1) if len(shape) == 1 else (3, 3)


def insert_conv(graph, rng) -> ir.NetworkGraph:
    """Identity-initialized convolution after a random in-cell position."""
    legal = [j for j, lid in enumerate(_canonical(graph))
             if mo.nonneg_guaranteed(graph, lid)]
    if not legal:
        raise MorphismError("cell offers no activation-safe insertion point")
    j = int(rng.choice(legal))
    separable = bool(rng.random() < 0.5)
    kernel = _default_kernel(graph)

    def step(g, idx):
        g = mo.deepen(g, g.metadata["cells"][idx][j], kernel=kernel,
                      separable=separable)
        return g, [dict(g.metadata["last_morphism"])]

    return _for_each_instance(graph, step)


def branch_insert_conv(graph, rng) -> ir.NetworkGraph:
    """Branch a convolution, then deepen inside one of the branches."""
    positions = _conv_positions(graph, branchable=True)
    if not positions:
        raise MorphismError("no branchable convolution in the cell")
    j = int(rng.choice(positions))
    side = int(rng.integers(0, 2))
    separable = bool(rng.random() < 0.5)
    kernel = _default_kernel(graph)

    def step(g, idx):
        g = mo.branch(g, g.metadata["cells"][idx][j])
        branched = dict(g.metadata["last_morphism"])
        if len(branched["added"]) != 5:
            # no folded ReLU -> the branch ends in a raw conv, where an
            # identity-initialized insert is not function preserving
            raise MorphismError("branched convolution does not feed a ReLU")
        relu = branched["added"][2 + side]
        g = mo.deepen(g, relu, kernel=kernel, separable=separable)
        return g, [branched, dict(g.metadata["last_morphism"])]

    return _for_each_instance(graph, step)


def insert_skip(graph, rng) -> ir.NetworkGraph:
    """Add a zero convolution whose output is summed with its input."""
    positions = _conv_positions(graph)
    if not positions:
        raise MorphismError("no convolution in the cell")
    j = int(rng.choice(positions))
    kernel = _default_kernel(graph)

    def step(g, idx):
        g = mo.insert_skip(g, g.metadata["cells"][idx][j],
                           {"kernel": kernel})
        return g, [dict(g.metadata["last_morphism"])]

    return _for_each_instance(graph, step)


def alter_filters(graph, rng) -> ir.NetworkGraph:
    """Widen a random cell convolution by a factor from [1.2, 2]."""
    positions = _conv_positions(graph)
    if not positions:
        raise MorphismError("no convolution in the cell")
    j = int(rng.choice(positions))
    factor = float(rng.uniform(1.2, 2.0))
    map_seed = int(rng.integers(2**31))  # same replication map per instance

    def step(g, idx):
        lid = g.metadata["cells"][idx][j]
        width = int(g.layer(lid).attrs["filters"])
        g = mo.widen_layer(g, lid, math.ceil(width * factor), rng=map_seed)
        return g, [dict(g.metadata["last_morphism"])]

    return _for_each_instance(graph, step)


def alter_units(graph, rng) -> ir.NetworkGraph:
    """Widen a hidden dense layer outside the cells by a [1.2, 2] factor.

    The classifier readout is exempt — its unit count is the class count.
    """
    in_cells = {lid for inst in graph.metadata.get("cells", []) for lid in inst}
    cons = graph.consumers()
    hidden = [
        spec.id for spec in graph.layers
        if spec.kind == "dense" and spec.id not in in_cells
        and not any(graph.layer(c).kind == "softmax" for c in cons[spec.id])
    ]
    if not hidden:
        raise MorphismError("no hidden dense layer outside the cells")
    lid = int(rng.choice(hidden))
    factor = float(rng.uniform(1.2, 2.0))
    units = int(graph.layer(lid).attrs["units"])
    return mo.widen_layer(graph, lid, math.ceil(units * factor),
                          rng=int(rng.integers(2**31)))


def alter_kernel(graph, rng) -> ir.NetworkGraph:
    """Grow a random cell convolution's kernel by two along each axis."""
    positions = _conv_positions(graph)
    if not positions:
        raise MorphismError("no convolution in the cell")
    j = int(rng.choice(positions))

    def step(g, idx):
        lid = g.metadata["cells"][idx][j]
        k1, k2 = g.layer(lid).kernel
        g = mo.widen_kernel(g, lid, (k1 + 2, k2 + 2))
        return g, [dict(g.metadata["last_morphism"])]

    return _for_each_instance(graph, step)


_APPLY = {
    "insert_conv": insert_conv,
    "branch_insert_conv": branch_insert_conv,
    "insert_skip": insert_skip,
    "alter_filters": alter_filters,
    "alter_units": alter_units,
    "alter_kernel": alter_kernel,
}


def mutate(graph, rng=None, kinds=MUTATION_KINDS, retry_cap: int = 10,
           verify: bool = True, tol: float = 1e-4, trials: int = 8):
    """One uniformly chosen mutation; inapplicable draws are resampled.

    Returns ``(child_graph, mutation_name)``.  With ``verify`` on, the
    child's forward pass is checked against the parent before it is
    returned — a failure there is a bug, not an inapplicable draw, so it
    raises instead of retrying.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    unknown = set(kinds) - set(_APPLY)
    if unknown:
        raise ValueError(f"unknown mutation kinds {sorted(unknown)}")
    last_error = None
    for _ in range(max(retry_cap, 1)):
        kind = str(rng.choice(list(kinds)))
        try:
            child = _APPLY[kind](graph, rng)
        except MorphismError as exc:
            last_error = exc
            continue
        if not ir.cell_instances_identical(child):
            raise MorphismError(f"{kind} desynchronized the cell instances")
        if verify:
            report = mo.verify_function_preserving(graph, child,
                                                   trials=trials, tol=tol)
            if not report["passed"]:
                raise MorphismError(
                    f"{kind} is not function preserving "
                    f"(max deviation {report['max_abs_diff']:.3g})"
                )
        child.metadata["last_mutation"] = kind
        return child, kind
    raise MorphismError(
        f"no applicable mutation after {retry_cap} draws: {last_error}"
    )
