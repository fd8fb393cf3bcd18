"""Dataset difficulty scoring with a fixed probe network.

The score is the peak holdout accuracy a small, fixed CNN reaches in
exactly ten epochs at 32x32 resolution.  It is computed once per
dataset and cached in the experiment database; everything downstream
(band filtering, predictor inputs) consumes the cached scalar.
"""

from __future__ import annotations

import numpy as np

from neunets import ir, nn
from neunets.data import ImageDataset, preprocess_images
from neunets.errors import DimensionError
from neunets.trainer import TrainJob, train

PROBE_EPOCHS = 10
PROBE_RESOLUTION = 32

# fixed so scores are comparable across datasets and across runs
_PROBE_OPTIMIZER = dict(kind="sgd_momentum", learning_rate=0.01,
                        momentum=0.9, batch_size=64)


def probe_net(input_shape, n_classes: int,
              filters=(8, 16, 32)) -> ir.NetworkGraph:
    """Three conv–norm–relu–pool blocks under a global-pool classifier."""
    g = ir.NetworkGraph(metadata={
        "input_shape": tuple(int(d) for d in input_shape),
        "n_classes": int(n_classes),
    })
    prev = g.add("input", [])
    for f in filters:
        c = g.add("conv", [prev], filters=int(f), kernel=(3, 3),
                  stride=1, padding="same")
        b = g.add("batch_norm", [c])
        r = g.add("relu", [b])
        prev = g.add("max_pool", [r], kernel=(2, 2), stride=2, padding="valid")
    gp = g.add("global_pool", [prev])
    d = g.add("dense", [gp], units=int(n_classes))
    g.add("softmax", [d])
    ir.validate_classifier(g)
    return g


def _subsample(dataset: ImageDataset, max_examples: int, seed: int) -> ImageDataset:
    n = len(dataset.images)
    if n <= max_examples:
        return dataset
    fraction = max_examples / n
    rng = np.random.default_rng(seed)
    splits = {}
    for name, idx in dataset.splits.items():
        keep = max(1, int(round(len(idx) * fraction)))
        splits[name] = rng.permutation(idx)[:keep]
    return ImageDataset(
        images=dataset.images, labels=dataset.labels,
        n_classes=dataset.n_classes, splits=splits,
        class_names=dataset.class_names, mean=dataset.mean, std=dataset.std,
    )


def compute_dcn(dataset: ImageDataset, lde=None, dataset_id: str | None = None,
                *, seed: int = 0, max_examples: int | None = None,
                filters=(8, 16, 32), log_path=None) -> float:
    """Difficulty score in [0, 1] for an image dataset.

    When a store and a dataset id are supplied, a previously cached
    score is returned without any training, and a freshly computed one
    is written back to the store.  Raw uint8 datasets are resized and
    standardized first; already-preprocessed inputs must be at 32x32.
    Large datasets may be subsampled via ``max_examples``.
    """
    if lde is not None and dataset_id is not None:
        cached = lde.dcn_for(dataset_id)
        if cached is not None:
            return cached
    if dataset.n_classes < 2:
        raise ValueError("difficulty scoring needs at least 2 classes")
    if dataset.images.dtype == np.uint8:
        dataset = preprocess_images(dataset, "tapas")
    h, w = dataset.images.shape[1:3]
    if (h, w) != (PROBE_RESOLUTION, PROBE_RESOLUTION):
        raise DimensionError(
            f"probe expects {PROBE_RESOLUTION}x{PROBE_RESOLUTION} inputs, "
            f"got {h}x{w}"
        )
    if max_examples is not None:
        dataset = _subsample(dataset, max_examples, seed)

    graph = probe_net(dataset.input_shape, dataset.n_classes, filters=filters)
    ir.initialize_weights(graph, seed=seed)
    # patience == epochs: the probe always runs its full ten epochs
    result = train(TrainJob(
        graph=graph, dataset=dataset,
        optimizer=nn.OptimizerConfig(**_PROBE_OPTIMIZER),
        epochs=PROBE_EPOCHS, patience=PROBE_EPOCHS, seed=seed,
        job_id=f"probe-{dataset_id or 'adhoc'}", log_path=log_path,
    ))
    dcn = float(result.best_holdout)
    if lde is not None and dataset_id is not None:
        lde.append_dcn(dataset_id, dcn)
    return dcn
