"""Local training executor: SGD loops, early stopping, holdout accuracy.

Jobs run to an epoch quota unless the holdout accuracy stalls for
``patience`` epochs or the shared budget ledger runs dry.  The weights a
job returns always come from its best-holdout epoch.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from neunets import ir, nn
from neunets.data.images import augment as _augment_batch
from neunets.errors import DivergenceError


def predict(graph, x, batch_size: int = 256) -> np.ndarray:
    """Top-1 class ids, eval mode."""
    out = []
    for start in range(0, len(x), batch_size):
        probs = ir.evaluate(graph, x[start : start + batch_size])
        out.append(np.argmax(probs, axis=-1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate_fitness(graph, x, labels, batch_size: int = 256) -> float:
    """Fraction of examples whose top-1 prediction matches the label."""
    if len(x) == 0:
        raise ValueError("cannot evaluate fitness on an empty split")
    return float((predict(graph, x, batch_size) == np.asarray(labels)).mean())


@dataclass
class TrainJob:
    """Everything one training run needs; graphs are owned, not shared."""

    graph: ir.NetworkGraph
    dataset: object  # ImageDataset or TextDataset (anything with .subset)
    optimizer: nn.OptimizerConfig = field(default_factory=nn.OptimizerConfig)
    epochs: int = 20
    patience: int = 5
    seed: int = 0
    augment: bool = False
    freeze: frozenset = frozenset()
    job_id: str = "job"
    ledger: object = None  # BudgetLedger-compatible: charge(s), exhausted()
    log_path: object = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epoch quota must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        self.freeze = frozenset(self.freeze)


@dataclass
class TrainResult:
    graph: ir.NetworkGraph
    train_curve: list
    holdout_curve: list
    epochs_run: int
    seconds: float
    best_epoch: int  # 1-based; 0 when the budget blocked every epoch
    best_holdout: float
    stopped_early: bool = False
    budget_exhausted: bool = False
    job_id: str = "job"

    def __post_init__(self):
        if len(self.train_curve) != self.epochs_run:
            raise ValueError("train curve length must equal epochs run")
        if len(self.holdout_curve) != self.epochs_run:
            raise ValueError("holdout curve length must equal epochs run")
        for acc in (*self.train_curve, *self.holdout_curve, self.best_holdout):
            if not 0.0 <= acc <= 1.0:
                raise ValueError(f"accuracy {acc} outside [0, 1]")


def _snapshot(weights):
    return {lid: {k: v.copy() for k, v in s.items()} for lid, s in weights.items()}


def _flat_params(graph, freeze):
    return {
        f"{lid}.{name}": arr
        for lid, slots in graph.weights.items() if lid not in freeze
        for name, arr in slots.items()
    }


def _flat_grads(grads, freeze):
    return {
        f"{lid}.{name}": arr
        for lid, slots in grads.items() if lid not in freeze
        for name, arr in slots.items()
    }


def _log_event(path, event) -> None:
    if path is None:
        return
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(event) + "\n")


def train(job: TrainJob) -> TrainResult:
    """Minibatch SGD with per-epoch holdout checks and best-weights restore.

    Deterministic for a fixed seed: one Generator drives shuffling,
    augmentation, and dropout in a fixed draw order.
    """
    g = job.graph
    try:
        x_train, y_train = job.dataset.subset("train")
        x_hold, y_hold = job.dataset.subset("holdout")
    except KeyError as exc:
        raise ValueError(f"dataset lacks required split: {exc}") from exc
    if len(x_train) == 0:
        raise ValueError("train split is empty")

    rng = np.random.default_rng(job.seed)
    opt = nn.make_optimizer(job.optimizer)
    params = _flat_params(g, job.freeze)
    n, bs = len(x_train), job.optimizer.batch_size
    is_image = x_train.ndim == 4

    if job.ledger is not None and job.ledger.exhausted():
        return TrainResult(
            graph=g, train_curve=[], holdout_curve=[], epochs_run=0,
            seconds=0.0, best_epoch=0,
            best_holdout=evaluate_fitness(g, x_hold, y_hold),
            budget_exhausted=True, job_id=job.job_id,
        )

    train_curve: list[float] = []
    holdout_curve: list[float] = []
    best_acc, best_epoch, best_weights = -1.0, 0, _snapshot(g.weights)
    bad_epochs = 0
    seconds = 0.0
    stopped_early = budget_exhausted = False

    for epoch in range(1, job.epochs + 1):
        tick = time.perf_counter()
        order = rng.permutation(n)
        correct = 0
        loss_sum = 0.0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            xb, yb = x_train[idx], y_train[idx]
            if job.augment and is_image:
                xb = _augment_batch(xb, rng)
            probs, tape = ir.evaluate_with_tape(
                g, xb, training=True, rng=rng, frozen=job.freeze
            )
            picked = probs[np.arange(len(idx)), yb]
            loss_sum += float(np.sum(-np.log(np.maximum(picked, 1e-12)),
                                     dtype=np.float64))
            if not np.isfinite(loss_sum):
                raise DivergenceError(epoch)
            correct += int((np.argmax(probs, axis=-1) == yb).sum())
            onehot = np.zeros_like(probs)
            onehot[np.arange(len(idx)), yb] = 1.0
            grads = ir.backward(g, tape, d_presoftmax=(probs - onehot) / len(idx))
            opt.step(params, _flat_grads(grads, job.freeze))

        holdout_acc = evaluate_fitness(g, x_hold, y_hold)
        train_curve.append(correct / n)
        holdout_curve.append(holdout_acc)
        elapsed = time.perf_counter() - tick
        seconds += elapsed
        if job.ledger is not None:
            job.ledger.charge(elapsed)
        _log_event(job.log_path, {
            "job": job.job_id, "epoch": epoch,
            "loss": loss_sum / n, "train_acc": train_curve[-1],
            "holdout_acc": holdout_acc, "seconds": elapsed,
            "ts": time.time(),
        })

        if holdout_acc > best_acc:
            best_acc, best_epoch, bad_epochs = holdout_acc, epoch, 0
            best_weights = _snapshot(g.weights)
        else:
            bad_epochs += 1
            if bad_epochs >= job.patience:
                stopped_early = True
                break
        if job.ledger is not None and job.ledger.exhausted():
            budget_exhausted = True
            break

    g.weights = best_weights
    return TrainResult(
        graph=g, train_curve=train_curve, holdout_curve=holdout_curve,
        epochs_run=len(train_curve), seconds=seconds, best_epoch=best_epoch,
        best_holdout=best_acc, stopped_early=stopped_early,
        budget_exhausted=budget_exhausted, job_id=job.job_id,
    )
