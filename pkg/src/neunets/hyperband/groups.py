"""Dataset grouping for warm-started search.

Datasets are summarized by six meta-features and assigned to the
nearest stored group under standardized Euclidean distance; a dataset
farther than the radius from every centroid opens a new group.  Each
group remembers the best configurations found on its members, and a
new member's search seeds its widest bracket with them.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from neunets import nn

META_FEATURE_NAMES = (
    "n_examples",
    "n_classes",
    "resolution",
    "channels",
    "class_entropy",
    "dcn",
)


def meta_features(dataset, dcn: float) -> np.ndarray:
    """Six-feature summary of a dataset; ``dcn`` is its difficulty score.

    Class balance entropy is normalized to [0, 1] (1 = perfectly
    balanced), so it stays comparable across class counts.
    """
    counts = np.bincount(np.asarray(dataset.labels),
                         minlength=dataset.n_classes).astype(np.float64)
    p = counts / counts.sum()
    p = p[p > 0]
    entropy = float(-(p * np.log(p)).sum())
    if dataset.n_classes > 1:
        entropy /= math.log(dataset.n_classes)
    n, h, _, c = dataset.images.shape
    return np.array([n, dataset.n_classes, h, c, entropy, float(dcn)],
                    dtype=np.float64)


@dataclass
class DatasetGroup:
    id: int
    centroid: list
    members: list = field(default_factory=list)   # {"dataset_id", "features"}
    best_configs: list = field(default_factory=list)  # sorted by accuracy desc


class GroupStore:
    """JSON-backed store of dataset groups; writes are atomic."""

    def __init__(self, path):
        self.path = Path(path)
        self.groups: list[DatasetGroup] = []
        if self.path.exists():
            payload = json.loads(self.path.read_text(encoding="utf-8"))
            self.groups = [DatasetGroup(**g) for g in payload["groups"]]

    def save(self) -> None:
        payload = {"groups": [asdict(g) for g in self.groups]}
        fd, tmp = tempfile.mkstemp(dir=self.path.parent or ".",
                                   prefix=self.path.name, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        os.replace(tmp, self.path)

    # -- distance ------------------------------------------------------------

    def _feature_stats(self):
        rows = np.array([m["features"] for g in self.groups for m in g.members],
                        dtype=np.float64)
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        std[std < 1e-9] = 1.0
        return mean, std

    def record_best(self, group_id: int, genome: dict, optimizer,
                    accuracy: float, keep: int = 5) -> None:
        """Remember a configuration that did well on a member dataset."""
        if isinstance(optimizer, nn.OptimizerConfig):
            optimizer = optimizer.to_dict()
        group = self.group(group_id)
        group.best_configs.append({
            "genome": genome, "optimizer": optimizer,
            "accuracy": float(accuracy),
        })
        group.best_configs.sort(key=lambda c: -c["accuracy"])
        del group.best_configs[keep:]
        self.save()

    def group(self, group_id: int) -> DatasetGroup:
        for g in self.groups:
            if g.id == group_id:
                return g
        raise KeyError(f"no group with id {group_id}")


def assign_group(features, store: GroupStore, radius: float = 1.0,
                 dataset_id: str | None = None) -> DatasetGroup:
    """The group a dataset belongs to, creating one when none is close.

    Distance is Euclidean in feature space standardized over every
    member the store has seen; a degenerate population (one member, or
    a constant feature) falls back to unit scale for that feature.  The
    dataset is recorded as a member and the centroid updated, so
    repeated assignment of identical features is stable.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (len(META_FEATURE_NAMES),):
        raise ValueError(
            f"expected {len(META_FEATURE_NAMES)} meta-features, "
            f"got shape {features.shape}"
        )

    chosen = None
    if store.groups:
        mean, std = store._feature_stats()
        z = (features - mean) / std
        distances = [
            float(np.linalg.norm(z - (np.asarray(g.centroid) - mean) / std))
            for g in store.groups
        ]
        nearest = int(np.argmin(distances))
        if distances[nearest] <= radius:
            chosen = store.groups[nearest]

    if chosen is None:
        chosen = DatasetGroup(id=len(store.groups), centroid=features.tolist())
        store.groups.append(chosen)

    chosen.members.append({
        "dataset_id": dataset_id,
        "features": features.tolist(),
    })
    member_rows = np.array([m["features"] for m in chosen.members])
    chosen.centroid = member_rows.mean(axis=0).tolist()
    store.save()
    return chosen
