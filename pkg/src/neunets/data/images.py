"""Image dataset container, on-disk format, and the preprocessing pipeline."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from neunets.errors import SerializationError

NNSD_MAGIC = b"NNSD"

# published input resolutions of the two image synthesizers
TARGET_RESOLUTION = {"ncevolve": 64, "tapas": 32}


@dataclass
class ImageDataset:
    """Images (n, h, w, c), integer labels, named example splits.

    ``images`` holds u8 source values until ``preprocess_images`` turns
    them into standardized float32 features; the standardization stats
    (train-split only) then live in ``mean``/``std``.
    """

    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    splits: dict[str, np.ndarray] = field(default_factory=dict)
    class_names: list[str] | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.images.ndim != 4:
            raise SerializationError(f"images must be (n,h,w,c), got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise SerializationError("label count does not match image count")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise SerializationError(
                f"labels must lie in [0, {self.n_classes}), "
                f"got range [{self.labels.min()}, {self.labels.max()}]"
            )

    def subset(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.splits[split]
        return self.images[idx], self.labels[idx]

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])


def assign_splits(n: int, seed: int = 0, train: float = 0.8,
                  holdout: float = 0.1) -> dict[str, np.ndarray]:
    """Shuffled train/holdout/test index partition (test takes the rest)."""
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * train))
    n_holdout = int(round(n * holdout))
    return {
        "train": order[:n_train],
        "holdout": order[n_train:n_train + n_holdout],
        "test": order[n_train + n_holdout:],
    }


# ---------------------------------------------------------------------------
# on-disk format


def save_image_dataset(directory, dataset: ImageDataset) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    images = np.ascontiguousarray(dataset.images, dtype=np.uint8)
    n, h, w, c = images.shape
    with open(directory / "images.bin", "wb") as fh:
        fh.write(NNSD_MAGIC)
        fh.write(struct.pack("<IHHH", n, h, w, c))
        fh.write(images.tobytes())
    with open(directory / "labels.bin", "wb") as fh:
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<u4").tobytes())
    meta = {
        "n_classes": dataset.n_classes,
        "classes": dataset.class_names or [str(i) for i in range(dataset.n_classes)],
        "height": h, "width": w, "channels": c,
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2))


def load_image_dataset(directory, split_seed: int = 0) -> ImageDataset:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "meta.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SerializationError(f"cannot read meta.json: {exc}") from exc
    raw = (directory / "images.bin").read_bytes()
    if raw[:4] != NNSD_MAGIC:
        raise SerializationError(f"images.bin has bad magic {raw[:4]!r}")
    n, h, w, c = struct.unpack_from("<IHHH", raw, 4)
    body = raw[14:]
    expected = n * h * w * c
    if len(body) != expected:
        raise SerializationError(
            f"images.bin holds {len(body)} pixel bytes, expected {expected}"
        )
    images = np.frombuffer(body, dtype=np.uint8).reshape(n, h, w, c).copy()
    labels = np.frombuffer((directory / "labels.bin").read_bytes(), dtype="<u4")
    if len(labels) != n:
        raise SerializationError(f"{len(labels)} labels for {n} images")
    return ImageDataset(
        images=images,
        labels=labels.astype(np.int64),
        n_classes=int(meta["n_classes"]),
        class_names=list(meta.get("classes", [])) or None,
        splits=assign_splits(n, seed=split_seed),
    )


def load_image_csv(path, split_seed: int = 0) -> ImageDataset:
    """Load from a `path,label` CSV where each path is a .npy u8 array.

    All referenced arrays must share one (h, w, c) shape; labels map to
    sorted class ids the same way the text loader does.
    """
    import csv

    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["path", "label"]:
            raise SerializationError(f"expected 'path,label' header, got {header}")
        rows = [(r[0], r[1]) for r in reader if len(r) >= 2]
    if not rows:
        raise SerializationError("empty image manifest")
    images, raw_labels = [], []
    for rel, label in rows:
        arr = np.load(path.parent / rel)
        if arr.ndim != 3:
            raise SerializationError(f"{rel}: expected (h,w,c) array, got {arr.shape}")
        images.append(arr.astype(np.uint8))
        raw_labels.append(label)
    shapes = {img.shape for img in images}
    if len(shapes) > 1:
        raise SerializationError(f"mixed image shapes in manifest: {sorted(shapes)}")
    class_names = sorted(set(raw_labels))
    to_id = {name: i for i, name in enumerate(class_names)}
    return ImageDataset(
        images=np.stack(images),
        labels=np.asarray([to_id[l] for l in raw_labels]),
        n_classes=len(class_names),
        class_names=class_names,
        splits=assign_splits(len(images), seed=split_seed),
    )


# ---------------------------------------------------------------------------
# preprocessing


def bilinear_resize(images: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Vectorized bilinear resampling; exact copy when sizes already match."""
    images = np.asarray(images, dtype=np.float32)
    n, h, w, c = images.shape
    if (h, w) == (out_h, out_w):
        return images.copy()
    # sample at pixel centers: dst pixel i reads from (i + 0.5) * scale - 0.5
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0).astype(np.float32)
    wx = np.clip(xs - x0, 0.0, 1.0).astype(np.float32)

    top = images[:, y0][:, :, x0] * (1 - wx)[None, None, :, None] \
        + images[:, y0][:, :, x1] * wx[None, None, :, None]
    bot = images[:, y1][:, :, x0] * (1 - wx)[None, None, :, None] \
        + images[:, y1][:, :, x1] * wx[None, None, :, None]
    return (top * (1 - wy)[None, :, None, None]
            + bot * wy[None, :, None, None]).astype(np.float32)


def standardize(images: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return ((images - mean) / std).astype(np.float32)


def compute_feature_stats(train_images: np.ndarray,
                          std_floor: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel-position (h, w, c) mean and floored std over the train split."""
    mean = train_images.mean(axis=0, dtype=np.float64)
    std = train_images.std(axis=0, dtype=np.float64)
    std = np.maximum(std, std_floor)
    return mean.astype(np.float32), std.astype(np.float32)


def preprocess_images(raw: ImageDataset, target_algo: str) -> ImageDataset:
    """Resize to the synthesizer's resolution and standardize feature-wise.

    Stats come from the train split alone and are applied to every split,
    so holdout/test stay honest.  Images below the target resolution are
    upscaled; the substrate wants uniform shapes.
    """
    if target_algo not in TARGET_RESOLUTION:
        raise ValueError(f"unknown algorithm {target_algo!r}")
    size = TARGET_RESOLUTION[target_algo]
    resized = bilinear_resize(raw.images, size, size)
    train_idx = raw.splits.get("train")
    if train_idx is None or len(train_idx) == 0:
        raise SerializationError("dataset has no train split to compute stats on")
    mean, std = compute_feature_stats(resized[train_idx])
    return ImageDataset(
        images=standardize(resized, mean, std),
        labels=raw.labels.copy(),
        n_classes=raw.n_classes,
        splits={k: v.copy() for k, v in raw.splits.items()},
        class_names=raw.class_names,
        mean=mean,
        std=std,
    )


def augment(batch: np.ndarray, rng: np.random.Generator,
            max_shift: int = 4) -> np.ndarray:
    """Per-sample horizontal flip (p=0.5) and left/right shift with zero fill.

    Training-time only; shifted-out columns are lost, so a +4 followed by
    a -4 shift is not the identity at the borders.
    """
    batch = np.asarray(batch, dtype=np.float32)
    out = batch.copy()
    n, _, w, _ = batch.shape
    flips = rng.random(n) < 0.5
    shifts = rng.integers(-max_shift, max_shift + 1, size=n)
    for i in range(n):
        img = batch[i, :, ::-1, :] if flips[i] else batch[i]
        s = int(shifts[i])
        if s == 0:
            out[i] = img
        elif s > 0:  # shift right
            out[i] = 0.0
            out[i, :, s:, :] = img[:, : w - s, :]
        else:  # shift left
            out[i] = 0.0
            out[i, :, :w + s, :] = img[:, -s:, :]
    return out
