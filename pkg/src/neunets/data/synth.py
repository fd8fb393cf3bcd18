"""Synthetic datasets with controllable difficulty.

Used to bootstrap the experiment database at desk scale and to give
tests datasets whose achievable accuracy is known by construction.
"""

from __future__ import annotations

import numpy as np

from neunets.data.images import ImageDataset, assign_splits


def separable_image_dataset(n: int = 200, n_classes: int = 2, size: int = 16,
                            channels: int = 3, seed: int = 0,
                            noise: float = 8.0) -> ImageDataset:
    """Each class paints a distinct intensity plateau; trivially learnable."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, size=n)
    base = np.linspace(40, 215, n_classes)[labels]
    images = base[:, None, None, None] + rng.normal(0, noise, (n, size, size, channels))
    return ImageDataset(
        images=np.clip(images, 0, 255).astype(np.uint8),
        labels=labels,
        n_classes=n_classes,
        splits=assign_splits(n, seed=seed),
    )


def random_label_dataset(n: int = 200, n_classes: int = 10, size: int = 16,
                         channels: int = 3, seed: int = 0) -> ImageDataset:
    """Noise images with labels drawn independently — nothing to learn."""
    rng = np.random.default_rng(seed)
    return ImageDataset(
        images=rng.integers(0, 256, (n, size, size, channels), dtype=np.uint8),
        labels=rng.integers(0, n_classes, size=n),
        n_classes=n_classes,
        splits=assign_splits(n, seed=seed),
    )


def striped_image_dataset(n: int = 200, n_classes: int = 3, size: int = 16,
                          channels: int = 3, seed: int = 0,
                          noise: float = 20.0) -> ImageDataset:
    """Class k shows k+1 horizontal stripes; separable but not trivially."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, size=n)
    rows = np.arange(size)
    images = np.empty((n, size, size, channels), dtype=np.float64)
    for i, lab in enumerate(labels):
        phase = np.sin(rows * (lab + 1) * 2 * np.pi / size) * 80 + 127
        images[i] = phase[:, None, None]
    images += rng.normal(0, noise, images.shape)
    return ImageDataset(
        images=np.clip(images, 0, 255).astype(np.uint8),
        labels=labels,
        n_classes=n_classes,
        splits=assign_splits(n, seed=seed),
    )


def synthetic_text_corpus(n: int = 120, n_classes: int = 2, seed: int = 0,
                          length: int = 12, overlap: float = 0.3):
    """(texts, labels): each class favors its own word family."""
    rng = np.random.default_rng(seed)
    families = [
        [f"word{k}x{j}" for j in range(6)] for k in range(n_classes)
    ]
    shared = [f"common{j}" for j in range(6)]
    labels = rng.integers(0, n_classes, size=n)
    texts = []
    for lab in labels:
        words = [
            str(rng.choice(shared)) if rng.random() < overlap
            else str(rng.choice(families[lab]))
            for _ in range(length)
        ]
        texts.append(" ".join(words))
    return texts, labels
