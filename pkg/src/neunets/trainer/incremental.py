"""Layer-by-layer training of chain networks under a disposable probe head.

Extending a trained prefix by one stage freezes everything already
trained, so each stage costs one small training run and the intermediate
accuracies come out as a by-product.
"""

from __future__ import annotations

import numpy as np

from neunets import ir, nn
from neunets.errors import GraphValidationError
from neunets.trainer.core import TrainJob, train


def chain_cut_points(graph) -> list[int]:
    """Non-input layer ids of a pure chain, in order; rejects branching."""
    cons = graph.consumers()
    cuts = []
    for lid in graph.topological_order():
        spec = graph.layer(lid)
        if len(spec.inputs) > 1 or len(cons[lid]) > 1:
            raise GraphValidationError(
                f"layer {lid} branches; pass explicit cut points for non-chains"
            )
        if spec.kind != "input":
            cuts.append(lid)
    return cuts


def prefix_graph(graph, cut_id: int, n_classes: int) -> ir.NetworkGraph:
    """Subgraph up to ``cut_id`` plus a fresh global-pool classifier head.

    Kept layers retain their original ids (and any attached weights), so
    weights trained on one prefix transplant directly onto the next.
    """
    keep = graph.ancestors(cut_id)
    sub = ir.NetworkGraph(
        layers=[spec.clone() for spec in graph.layers if spec.id in keep],
        weights={
            lid: {k: v.copy() for k, v in slots.items()}
            for lid, slots in graph.weights.items() if lid in keep
        },
        metadata=dict(graph.metadata),
    )
    # head ids start above the whole source graph's range so they can never
    # shadow a trunk layer on a later, deeper prefix
    base = graph.next_id()
    sub.layers.append(ir.LayerSpec(base, "global_pool", {}, [cut_id]))
    sub.layers.append(ir.LayerSpec(base + 1, "dense", {"units": n_classes}, [base]))
    sub.layers.append(ir.LayerSpec(base + 2, "softmax", {}, [base + 1]))
    ir.validate_graph(sub)
    return sub


def incremental_train(graph, dataset, cut_points=None, *, epochs: int = 5,
                      patience: int = 3, seed: int = 0, optimizer=None,
                      augment: bool = False, ledger=None, log_path=None):
    """Holdout accuracy of every prefix of a chain, trained one stage at a time.

    Stage k reuses the stage-(k-1) weights frozen in place and trains only
    the new layers plus a temporary head; the head is rebuilt per stage and
    discarded.  Returns one accuracy per cut point.
    """
    if cut_points is None:
        cut_points = chain_cut_points(graph)
    if not cut_points:
        raise GraphValidationError("no cut points to train")
    for prev, cur in zip(cut_points, cut_points[1:]):
        if prev not in graph.ancestors(cur):
            raise GraphValidationError(
                f"cut point {prev} is not an ancestor of {cur}"
            )
    optimizer = optimizer or nn.OptimizerConfig()
    n_classes = int(dataset.n_classes)

    trunk: dict[int, dict[str, np.ndarray]] = {}
    accuracies: list[float] = []
    for step, cut in enumerate(cut_points, start=1):
        pg = prefix_graph(graph, cut, n_classes)
        head_ids = {spec.id for spec in pg.layers if not graph.has_layer(spec.id)}
        ir.initialize_weights(pg, seed=seed)
        for lid, slots in trunk.items():
            if pg.has_layer(lid):
                pg.weights[lid] = {k: v.copy() for k, v in slots.items()}
        frozen = frozenset(lid for lid in trunk if pg.has_layer(lid))
        result = train(TrainJob(
            graph=pg, dataset=dataset, optimizer=optimizer, epochs=epochs,
            patience=patience, seed=seed, augment=augment, freeze=frozen,
            job_id=f"prefix-{step}", ledger=ledger, log_path=log_path,
        ))
        accuracies.append(result.best_holdout)
        for lid, slots in pg.weights.items():
            if lid not in head_ids:
                trunk[lid] = slots
    return accuracies
