"""Grow-prune-merge synthesis of custom dense filters."""

from .network import (
    BaseClassifier,
    FeatureDataset,
    GrownClassifier,
    WeightBucket,
    cross_entropy,
    feature_dataset_from_images,
    fit,
)
from .phases import (
    PRUNE_METRICS,
    FineGrainedResult,
    PhaseState,
    k_medoids,
    phase0_select,
    phase1_grow,
    phase2_prune,
    phase3_merge,
    phase4_reinit_retrain,
    run_finegrained,
)

__all__ = [
    "BaseClassifier",
    "FeatureDataset",
    "FineGrainedResult",
    "GrownClassifier",
    "PRUNE_METRICS",
    "PhaseState",
    "WeightBucket",
    "cross_entropy",
    "feature_dataset_from_images",
    "fit",
    "k_medoids",
    "phase0_select",
    "phase1_grow",
    "phase2_prune",
    "phase3_merge",
    "phase4_reinit_retrain",
    "run_finegrained",
]
