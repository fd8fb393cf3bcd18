"""Predictor-driven architecture search.

The loop is: score the dataset, pull the band of comparable experiments
from the database, fit the accuracy predictor on them, sample candidate
chains, rank them by predicted accuracy, and fully train only the top
few — returning whichever measured best.  ``bootstrap_lde`` populates
an empty database at desk scale by incrementally training small sampled
networks on synthetic datasets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from neunets import ir, nn
from neunets.data import ImageDataset, preprocess_images
from neunets.errors import InsufficientExperienceError
from neunets.tapas.lde import ExperimentRecord, LDEStore, lde_select
from neunets.tapas.probe import compute_dcn
from neunets.tapas.space import SearchSpace, chain_cut_ids, lower_chain, sample_search_space
from neunets.tapas.tap import predict_accuracy, train_tap
from neunets.trainer import TrainJob, evaluate_fitness, incremental_train, train

# small domains so a bootstrap run stays in the minutes range on a laptop
DESK_SPACE = SearchSpace(max_layers=4, filters=(4, 8, 16))


def _as_probe_input(dataset: ImageDataset) -> ImageDataset:
    if dataset.images.dtype == np.uint8:
        return preprocess_images(dataset, "tapas")
    return dataset


def bootstrap_lde(store: LDEStore, datasets: dict, *, n_networks: int = 4,
                  epochs: int = 3, seed: int = 0,
                  space: SearchSpace = DESK_SPACE, log_path=None) -> int:
    """Populate an experiment database from scratch.

    For each dataset (keyed by id) a handful of chains is sampled and
    trained one layer at a time, which yields every prefix accuracy for
    the price of one run.  All networks share one hyperparameter
    setting so records stay comparable.  Returns the number of records
    appended.
    """
    optimizer = nn.OptimizerConfig()
    added = 0
    for di, (ds_id, raw) in enumerate(sorted(datasets.items())):
        ds = _as_probe_input(raw)
        dcn = compute_dcn(ds, lde=store, dataset_id=ds_id, seed=seed)
        rng = np.random.default_rng([seed, di])
        for _ in range(n_networks):
            chain = sample_search_space(rng, input_shape=ds.input_shape,
                                        space=space)
            graph = lower_chain(chain, ds.input_shape, ds.n_classes)
            accuracies = incremental_train(
                graph, ds, cut_points=chain_cut_ids(graph),
                epochs=epochs, patience=epochs, optimizer=optimizer,
                seed=int(rng.integers(2 ** 31)), log_path=log_path,
            )
            store.append(ExperimentRecord(
                chain=chain, dataset_id=ds_id, dcn=dcn,
                input_shape=ds.input_shape, n_classes=ds.n_classes,
                hyperparameters={"optimizer": optimizer.to_dict(),
                                 "epochs": epochs},
                accuracies=accuracies,
            ))
            added += 1
    return added


@dataclass
class TapasSearchResult:
    graph: ir.NetworkGraph
    accuracy: float
    dcn: float
    predicted: float
    candidates: list = field(default_factory=list)
    partial: bool = False


def tapas_search(dataset: ImageDataset, n_candidates: int, budget=None, *,
                 lde, dataset_id: str | None = None, tau: float = 0.05,
                 top_m: int = 3, seed: int = 0, train_epochs: int = 8,
                 tap_epochs: int = 400, space: SearchSpace | None = None,
                 log_path=None) -> TapasSearchResult:
    """Rank sampled chains by predicted accuracy; train only the best few.

    Raises :class:`InsufficientExperienceError` when the database holds
    no experiments within ``tau`` of the dataset's difficulty score —
    the predictor would have nothing to learn from.  With an exhausted
    budget the result carries ``partial=True`` and the best candidate
    measured so far.
    """
    if n_candidates < 1:
        raise ValueError("need at least one candidate")
    ds = _as_probe_input(dataset)
    dcn = compute_dcn(ds, lde=lde, dataset_id=dataset_id, seed=seed,
                      log_path=log_path)
    band = lde_select(lde, dcn, tau)
    if not band:
        raise InsufficientExperienceError(
            f"no stored experiments within {tau} of difficulty {dcn:.3f}; "
            "bootstrap the experiment database before searching"
        )
    tap = train_tap(band, seed=seed, epochs=tap_epochs)

    rng = np.random.default_rng([seed, 1])
    space = space or DESK_SPACE
    chains = [sample_search_space(rng, input_shape=ds.input_shape, space=space)
              for _ in range(n_candidates)]
    predictions = np.array([
        predict_accuracy(tap, c, dcn, ds.n_classes, ds.input_shape)
        for c in chains
    ])
    # stable sort: ties go to the lower candidate index
    order = np.argsort(-predictions, kind="stable")

    candidates = [{"chain": chains[i], "predicted": float(predictions[i]),
                   "rank": int(rank), "measured": None}
                  for rank, i in enumerate(order)]
    x_hold, y_hold = ds.subset("holdout")
    best = None
    partial = False
    for rank, ci in enumerate(order[:top_m]):
        graph = lower_chain(chains[ci], ds.input_shape, ds.n_classes)
        ir.initialize_weights(graph, seed=int(rng.integers(2 ** 31)))
        if budget is not None and budget.exhausted():
            partial = True
            if best is None:
                # nothing trained at all: fall back to the untrained favorite
                acc = evaluate_fitness(graph, x_hold, y_hold)
                candidates[rank]["measured"] = acc
                best = (acc, rank, graph, float(predictions[ci]))
            break
        result = train(TrainJob(
            graph=graph, dataset=ds, epochs=train_epochs,
            patience=train_epochs, seed=seed, job_id=f"candidate-{rank}",
            ledger=budget, log_path=log_path,
        ))
        candidates[rank]["measured"] = result.best_holdout
        if best is None or result.best_holdout > best[0]:
            best = (result.best_holdout, rank, result.graph, float(predictions[ci]))
        if result.budget_exhausted and rank + 1 < min(top_m, len(order)):
            partial = True
            break

    accuracy, _, graph, predicted = best
    return TapasSearchResult(
        graph=graph, accuracy=accuracy, dcn=dcn, predicted=predicted,
        candidates=candidates, partial=partial,
    )
