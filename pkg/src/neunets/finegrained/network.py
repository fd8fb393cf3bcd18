"""Small dense classifiers whose first layer can be pruned and weight-tied.

Two models live here: a linear softmax classifier (the starting point)
and a one-hidden-layer net whose input connections can be masked away or
tied together in shared weight buckets.  Everything runs in float64 so
exactness checks (function preservation, least-squares restoration,
finite-difference gradients) are not at the mercy of float32 rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BaseClassifier",
    "FeatureDataset",
    "GrownClassifier",
    "WeightBucket",
    "cross_entropy",
    "feature_dataset_from_images",
    "fit",
]

ACTIVATIONS = ("relu", "linear")


# ---------------------------------------------------------------------------
# data


@dataclass
class FeatureDataset:
    """Flat feature vectors (n, d), integer labels, named example splits."""

    x: np.ndarray
    labels: np.ndarray
    n_classes: int
    splits: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.x.ndim != 2:
            raise ValueError(f"features must be (n, d), got {self.x.shape}")
        if len(self.labels) != len(self.x):
            raise ValueError("label count does not match feature row count")

    def subset(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.splits[split]
        return self.x[idx], self.labels[idx]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]


def feature_dataset_from_images(dataset) -> FeatureDataset:
    """Flatten an image dataset's (n, h, w, c) pixels into feature rows."""
    images = np.asarray(dataset.images, dtype=np.float64)
    return FeatureDataset(
        x=images.reshape(len(images), -1),
        labels=dataset.labels,
        n_classes=dataset.n_classes,
        splits=dataset.splits,
    )


# ---------------------------------------------------------------------------
# numerics shared by both classifiers


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true classes."""
    logp = _log_softmax(np.asarray(logits, dtype=np.float64))
    return float(-logp[np.arange(len(labels)), labels].mean())


def _dlogits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    probs = np.exp(_log_softmax(logits))
    probs[np.arange(len(labels)), labels] -= 1.0
    return probs / len(labels)


def _apply_activation(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "linear":
        return pre
    raise ValueError(f"unknown activation {activation!r}")


# ---------------------------------------------------------------------------
# models


class BaseClassifier:
    """Linear softmax classifier: logits = x @ w + b, w of shape (n, m)."""

    def __init__(self, w: np.ndarray, b: np.ndarray):
        self.w = np.asarray(w, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[1],):
            raise ValueError("weight must be (n, m) with bias (m,)")

    @classmethod
    def create(cls, n_features: int, n_classes: int, seed: int = 0) -> "BaseClassifier":
        rng = np.random.default_rng(seed)
        scale = 1.0 / math.sqrt(n_features)
        w = rng.normal(0.0, scale, size=(n_features, n_classes))
        return cls(w, np.zeros(n_classes))

    def logits(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.w + self.b

    def accuracy(self, x: np.ndarray, labels: np.ndarray) -> float:
        return float((self.logits(x).argmax(axis=1) == labels).mean())

    def loss(self, x: np.ndarray, labels: np.ndarray) -> float:
        return cross_entropy(self.logits(x), labels)

    def loss_and_grads(self, x, labels):
        x = np.asarray(x, dtype=np.float64)
        logits = x @ self.w + self.b
        d = _dlogits(logits, labels)
        grads = {"w": x.T @ d, "b": d.sum(axis=0)}
        return cross_entropy(logits, labels), grads

    def trainable(self) -> dict[str, np.ndarray]:
        return {"w": self.w, "b": self.b}

    def params(self) -> int:
        return self.w.size + self.b.size

    def clone(self) -> "BaseClassifier":
        return BaseClassifier(self.w.copy(), self.b.copy())


@dataclass
class WeightBucket:
    """A shared first-layer weight vector and the hidden neurons using it."""

    bucket_id: int
    vector: np.ndarray
    members: list[int]


class GrownClassifier:
    """Two-layer classifier with a maskable, bucket-tieable first layer.

    The first layer is stored as a dense (n, l) matrix plus a boolean
    mask of the connections still alive.  Once buckets are attached the
    per-neuron input weights are no longer free: column h is rebuilt
    from its bucket's shared vector at the neuron's retained input rows,
    and gradients flow back into the shared vector (summed over members).
    """

    def __init__(self, w1, b1, w2, b2, activation: str = "relu",
                 mask=None, retained=None, buckets=None, assignment=None):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.mask = (np.ones(self.w1.shape, dtype=bool)
                     if mask is None else np.asarray(mask, dtype=bool))
        if self.mask.shape != self.w1.shape:
            raise ValueError("mask shape must match the first-layer weights")
        self.retained = retained      # per-hidden sorted input index arrays
        self.buckets = buckets        # list[WeightBucket] | None
        self.assignment = assignment  # (l,) bucket index per hidden neuron

    # -- shape helpers ------------------------------------------------------

    @property
    def n_inputs(self) -> int:
        return self.w1.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.w1.shape[1]

    def fan_in(self) -> np.ndarray:
        """Live inbound connections per hidden neuron."""
        return self.mask.sum(axis=0)

    def materialized_w1(self) -> np.ndarray:
        """The effective first-layer matrix, shared buckets expanded."""
        if self.buckets is None:
            return np.where(self.mask, self.w1, 0.0)
        w = np.zeros_like(self.w1)
        for bucket in self.buckets:
            for h in bucket.members:
                w[self.retained[h], h] = bucket.vector
        return w

    # -- forward / backward -------------------------------------------------

    def _forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        w1 = self.materialized_w1()
        pre = x @ w1 + self.b1
        hidden = _apply_activation(pre, self.activation)
        return x, pre, hidden, hidden @ self.w2 + self.b2

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x)[3]

    def accuracy(self, x: np.ndarray, labels: np.ndarray) -> float:
        return float((self.logits(x).argmax(axis=1) == labels).mean())

    def loss(self, x: np.ndarray, labels: np.ndarray) -> float:
        return cross_entropy(self.logits(x), labels)

    def loss_and_grads(self, x, labels):
        """Cross-entropy loss plus gradients for every trainable array.

        With buckets attached the first-layer gradient is reported per
        shared vector: the sum of the dense gradient entries at every
        member's retained positions.
        """
        x, pre, hidden, logits = self._forward(x)
        d = _dlogits(logits, labels)
        grads = {"w2": hidden.T @ d, "b2": d.sum(axis=0)}
        dhidden = d @ self.w2.T
        if self.activation == "relu":
            dhidden = dhidden * (pre > 0)
        grads["b1"] = dhidden.sum(axis=0)
        dw1 = x.T @ dhidden
        if self.buckets is None:
            grads["w1"] = np.where(self.mask, dw1, 0.0)
        else:
            grads["buckets"] = [
                sum(dw1[self.retained[h], h] for h in bucket.members)
                for bucket in self.buckets
            ]
        return cross_entropy(logits, labels), grads

    # -- training -----------------------------------------------------------

    def trainable(self) -> dict[str, np.ndarray]:
        slots = {"b1": self.b1, "w2": self.w2, "b2": self.b2}
        if self.buckets is None:
            slots["w1"] = self.w1
        else:
            for bucket in self.buckets:
                slots[f"bucket{bucket.bucket_id}"] = bucket.vector
        return slots

    def params(self) -> int:
        """Trainable scalar count; masked-out and tied entries don't count."""
        if self.buckets is None:
            first = int(self.mask.sum())
        else:
            first = sum(b.vector.size for b in self.buckets)
        return first + self.b1.size + self.w2.size + self.b2.size

    def clone(self) -> "GrownClassifier":
        buckets = None
        if self.buckets is not None:
            buckets = [WeightBucket(b.bucket_id, b.vector.copy(), list(b.members))
                       for b in self.buckets]
        return GrownClassifier(
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(),
            activation=self.activation, mask=self.mask.copy(),
            retained=None if self.retained is None else [r.copy() for r in self.retained],
            buckets=buckets,
            assignment=None if self.assignment is None else self.assignment.copy(),
        )


def _sgd_step(net, grads, velocity, lr, momentum):
    slots = net.trainable()
    buckets = getattr(net, "buckets", None)
    if buckets is not None and "buckets" in grads:
        for bucket in buckets:
            grads[f"bucket{bucket.bucket_id}"] = grads["buckets"][bucket.bucket_id]
        del grads["buckets"]
    for name, param in slots.items():
        g = grads[name]
        if name == "w1":
            g = np.where(net.mask, g, 0.0)
        v = velocity.setdefault(name, np.zeros_like(param))
        v *= momentum
        v -= lr * g
        param += v
    if isinstance(net, GrownClassifier) and buckets is None:
        net.w1 *= net.mask


def _snapshot(net):
    return {name: arr.copy() for name, arr in net.trainable().items()}


def _restore(net, snap):
    for name, arr in net.trainable().items():
        arr[...] = snap[name]


def fit(net, dataset: FeatureDataset, *, epochs: int, learning_rate: float,
        batch_size: int = 64, momentum: float = 0.9, patience: int | None = None,
        seed: int = 0) -> dict:
    """Minibatch SGD on the train split, accuracy checks on the holdout.

    With ``patience`` set, stops after that many epochs without holdout
    improvement and restores the best snapshot; the pre-training weights
    count as the epoch-0 candidate, so a run that never improves on its
    starting point hands it back untouched.  Without ``patience``, every
    epoch runs and the final weights stand — the right behaviour for the
    short "settle for a few epochs" stages.  ``epochs=0`` is allowed and
    leaves the network alone.
    """
    x_train, y_train = dataset.subset("train")
    x_hold, y_hold = dataset.subset("holdout")
    rng = np.random.default_rng(seed)
    velocity: dict[str, np.ndarray] = {}
    history = {"train_accuracy": [], "holdout_accuracy": []}
    best_acc, bad, best_state = -1.0, 0, None
    if patience is not None and epochs > 0:
        best_acc, best_state = net.accuracy(x_hold, y_hold), _snapshot(net)

    for _ in range(epochs):
        order = rng.permutation(len(x_train))
        correct = 0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            loss, grads = net.loss_and_grads(x_train[idx], y_train[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"training diverged (loss={loss})")
            _sgd_step(net, grads, velocity, learning_rate, momentum)
            correct += int((net.logits(x_train[idx]).argmax(axis=1) == y_train[idx]).sum())
        hold_acc = net.accuracy(x_hold, y_hold)
        history["train_accuracy"].append(correct / len(x_train))
        history["holdout_accuracy"].append(hold_acc)
        if patience is not None:
            if hold_acc > best_acc:
                best_acc, bad, best_state = hold_acc, 0, _snapshot(net)
            else:
                bad += 1
                if bad >= patience:
                    break

    if patience is not None and best_state is not None:
        _restore(net, best_state)
    history["final_holdout_accuracy"] = net.accuracy(x_hold, y_hold)
    return history
