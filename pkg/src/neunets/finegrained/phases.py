"""Five-stage grow/prune/merge/retune pass over a dense classifier head.

The stages move strictly forward through a small state machine: select
important inputs (0), grow a hidden layer without changing the network
function (1), prune its input connections down to a fixed fan-in (2),
merge the surviving per-neuron weight vectors into shared buckets (3),
and re-solve + retrain the output layer (4).  Every stage returns a new
immutable state carrying a JSON-ready report.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from neunets.errors import ForbiddenPositionError, MorphismError, StateError

from .network import (
    ACTIVATIONS,
    BaseClassifier,
    FeatureDataset,
    GrownClassifier,
    WeightBucket,
    _apply_activation,
    feature_dataset_from_images,
    fit,
)

__all__ = [
    "FineGrainedResult",
    "PRUNE_METRICS",
    "PhaseState",
    "k_medoids",
    "phase0_select",
    "phase1_grow",
    "phase2_prune",
    "phase3_merge",
    "phase4_reinit_retrain",
    "run_finegrained",
]

PRUNE_METRICS = ("change", "absolute", "value")

RIDGE_LAMBDA = 1e-6


@dataclass(frozen=True)
class PhaseState:
    """Snapshot between stages; arrays that must not drift are write-locked."""

    phase: int
    dataset: FeatureDataset          # restricted to the selected features
    selected: np.ndarray             # original feature indices, ascending
    network: object                  # BaseClassifier (phase 0) then GrownClassifier
    probe_x: np.ndarray              # frozen probe batch, selected columns only
    reference_logits: np.ndarray     # frozen phase-0 outputs on the probe batch
    base_accuracy: float             # holdout accuracy of the full trained base
    base_params: int                 # trainable count of the full base
    reports: tuple = ()
    w1_init: np.ndarray | None = None
    prune_schedule: tuple = ()

    @property
    def buckets(self):
        return getattr(self.network, "buckets", None)

    @property
    def report(self) -> dict:
        return self.reports[-1]


def _require_phase(state: PhaseState, expected: int, op: str) -> None:
    if state.phase != expected:
        raise StateError(
            f"{op} needs a phase-{expected} state, got phase {state.phase}; "
            "stages only move forward"
        )


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


def _as_features(dataset) -> FeatureDataset:
    if isinstance(dataset, FeatureDataset):
        return dataset
    if hasattr(dataset, "images"):
        return feature_dataset_from_images(dataset)
    raise TypeError(
        "expected a FeatureDataset or an image dataset with .images, "
        f"got {type(dataset).__name__}"
    )


def _head_features(graph, dataset):
    """Split a trained classifier graph into trunk features and head weights.

    Runs everything before the final dense layer over the dataset once;
    those activations become the feature table the five stages work on.
    Returns (features, w, b) with w/b None when the head carries no
    trained weights yet.
    """
    from neunets import ir

    topo = graph.topological_order()
    if len(topo) < 3:
        raise ValueError("graph is too small to carry a dense + softmax head")
    head_id, dense_id = topo[-1], topo[-2]
    if graph.layer(head_id).kind != "softmax" or graph.layer(dense_id).kind != "dense":
        raise ValueError("expected the graph to end in dense -> softmax")
    trunk = graph.clone()
    trunk.remove_layer(head_id)
    trunk.remove_layer(dense_id)

    images = np.asarray(dataset.images, dtype=np.float32)
    chunks = []
    for start in range(0, len(images), 256):
        out = ir.evaluate(trunk, images[start:start + 256])
        chunks.append(np.asarray(out, dtype=np.float64))
    x = np.concatenate(chunks).reshape(len(images), -1)
    features = FeatureDataset(x, dataset.labels, dataset.n_classes, dataset.splits)

    slots = graph.weights.get(dense_id)
    if slots is None:
        return features, None, None
    w = np.asarray(slots["w"], dtype=np.float64)
    b = slots.get("b")
    b = np.zeros(w.shape[1]) if b is None else np.asarray(b, dtype=np.float64)
    return features, w, b


# ---------------------------------------------------------------------------
# phase 0: importance selection


def phase0_select(source, dataset, *, q: float = 1.0, probe_size: int = 256,
                  epochs: int = 60, patience: int = 5,
                  learning_rate: float = 0.1, batch_size: int = 64,
                  seed: int = 0) -> PhaseState:
    """Train (or reuse) the base classifier and keep the important inputs.

    ``source`` may be None (a fresh linear classifier is trained on the
    dataset's features), an already-trained BaseClassifier, or a trained
    classifier graph whose dense head is lifted off and whose trunk
    activations become the features.  Importance of an input is its mean
    absolute value over a probe batch; the top ``q`` fraction survives.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")

    trained_here = False
    if source is None:
        features = _as_features(dataset)
        base = BaseClassifier.create(features.n_features, features.n_classes,
                                     seed=seed)
        fit(base, features, epochs=epochs, learning_rate=learning_rate,
            batch_size=batch_size, patience=patience, seed=[seed, 0, 1])
        trained_here = True
    elif isinstance(source, BaseClassifier):
        features = _as_features(dataset)
        if source.w.shape[0] != features.n_features:
            raise ValueError(
                f"classifier expects {source.w.shape[0]} features, "
                f"dataset has {features.n_features}"
            )
        base = source.clone()
    else:
        features, w, b = _head_features(source, dataset)
        if w is None:
            base = BaseClassifier.create(features.n_features,
                                         features.n_classes, seed=seed)
            fit(base, features, epochs=epochs, learning_rate=learning_rate,
                batch_size=batch_size, patience=patience, seed=[seed, 0, 1])
            trained_here = True
        else:
            base = BaseClassifier(w, b)

    x_hold, y_hold = features.subset("holdout")
    base_accuracy = base.accuracy(x_hold, y_hold)
    base_params = base.params()

    x_train, _ = features.subset("train")
    rng = np.random.default_rng([seed, 0])
    take = min(probe_size, len(x_train))
    probe_full = x_train[rng.choice(len(x_train), size=take, replace=False)]
    importance = np.abs(probe_full).mean(axis=0)

    n_keep = max(1, math.ceil(q * features.n_features))
    order = np.argsort(-importance, kind="stable")
    selected = np.sort(order[:n_keep])

    restricted = FeatureDataset(features.x[:, selected], features.labels,
                                features.n_classes, features.splits)
    network = BaseClassifier(base.w[selected, :].copy(), base.b.copy())
    probe_x = _frozen(probe_full[:, selected])
    reference = _frozen(network.logits(probe_x))
    selected_accuracy = network.accuracy(*restricted.subset("holdout"))

    report = {
        "phase": 0,
        "total_features": int(features.n_features),
        "selected_features": int(len(selected)),
        "holdout_accuracy": float(base_accuracy),
        "selected_holdout_accuracy": float(selected_accuracy),
        "params": int(base_params),
        "selected_params": int(network.params()),
        "trained": trained_here,
    }
    return PhaseState(
        phase=0, dataset=restricted, selected=selected, network=network,
        probe_x=probe_x, reference_logits=reference,
        base_accuracy=float(base_accuracy), base_params=int(base_params),
        reports=(report,),
    )


# ---------------------------------------------------------------------------
# phase 1: function-preserving growth


def phase1_grow(state: PhaseState, replication: int = 3, *,
                activation: str = "relu", epochs: int = 3,
                learning_rate: float = 0.05, batch_size: int = 64,
                seed: int = 0) -> PhaseState:
    """Insert a hidden layer that initially computes the same function.

    Every selected input gets ``replication`` private hidden neurons whose
    incoming coefficients sum to one; connections from all other inputs
    start at zero, and the output layer repeats the base weights across
    the replicas.  Because the activation passes scaled non-negative
    values through unchanged, the network outputs match the phase-0
    reference at init; a short retraining run then lets the new layer
    drift.  ``replication=1`` is plain deepen-with-identity.
    """
    _require_phase(state, 0, "phase1_grow")
    if not isinstance(replication, (int, np.integer)) or replication < 1:
        raise ValueError(f"replication must be a positive integer, got {replication}")
    if activation not in ACTIVATIONS:
        raise MorphismError(
            f"activation {activation!r} lacks an identity pass-through; "
            "the grown layer could not preserve the network function"
        )
    if activation == "relu" and float(state.dataset.x.min()) < 0.0:
        raise ForbiddenPositionError(
            "input features may be negative; ReLU replicas would not "
            "preserve them"
        )

    base: BaseClassifier = state.network
    n, m = base.w.shape
    l = replication * n
    rng = np.random.default_rng([seed, 1])

    w1 = np.zeros((n, l))
    for i in range(n):
        c = rng.random(replication) + 0.25
        c = c / c.sum()
        if replication > 1:
            c[-1] = 1.0 - c[:-1].sum()
        w1[i, i * replication:(i + 1) * replication] = c
    b1 = np.zeros(l)
    w2 = np.repeat(base.w, replication, axis=0)
    b2 = base.b.copy()

    net = GrownClassifier(w1, b1, w2, b2, activation=activation)
    init_deviation = float(np.max(np.abs(net.logits(state.probe_x)
                                         - state.reference_logits)))
    w1_init = _frozen(w1)

    if epochs:
        fit(net, state.dataset, epochs=epochs, learning_rate=learning_rate,
            batch_size=batch_size, seed=[seed, 1, 1])

    report = {
        "phase": 1,
        "hidden_neurons": int(l),
        "replication": int(replication),
        "activation": activation,
        "init_deviation": init_deviation,
        "params": int(net.params()),
        "holdout_accuracy": float(net.accuracy(*state.dataset.subset("holdout"))),
    }
    return replace(state, phase=1, network=net, w1_init=w1_init,
                   reports=state.reports + (report,))


# ---------------------------------------------------------------------------
# phase 2: iterative pruning


def _prune_scores(net: GrownClassifier, w1_init, metric: str) -> np.ndarray:
    w = net.materialized_w1()
    if metric == "change":
        return np.abs(w - w1_init)
    if metric == "absolute":
        return np.abs(w)
    return w.copy()  # "value": keep the largest signed weights


def phase2_prune(state: PhaseState, n_keep: int, steps: int = 1, *,
                 metric: str = "change", epochs: int = 2,
                 learning_rate: float = 0.05, batch_size: int = 64,
                 seed: int = 0) -> PhaseState:
    """Cut each hidden neuron's inputs down to exactly ``n_keep``.

    The default metric prunes the connections that moved least from
    their phase-1 init; ``absolute`` and ``value`` rank by |w| and by the
    signed weight instead.  Fan-in targets descend linearly over
    ``steps`` rounds with a short retraining run after each, and pruned
    connections stay dead for good.
    """
    _require_phase(state, 1, "phase2_prune")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if n_keep < 1:
        raise ValueError(f"n_keep must be >= 1, got {n_keep}")
    if metric not in PRUNE_METRICS:
        raise ValueError(f"metric must be one of {PRUNE_METRICS}, got {metric!r}")
    net: GrownClassifier = state.network.clone()
    start = int(net.fan_in().min())
    if n_keep > start:
        raise ValueError(f"cannot retain {n_keep} connections; fan-in is only {start}")

    targets = []
    prev = start
    for s in range(1, steps + 1):
        t = int(round(start - (start - n_keep) * s / steps))
        t = min(prev, max(t, n_keep))
        targets.append(t)
        prev = t
    targets[-1] = n_keep

    for step_idx, target in enumerate(targets):
        scores = _prune_scores(net, state.w1_init, metric)
        scores[~net.mask] = -np.inf
        for h in range(net.n_hidden):
            order = np.argsort(-scores[:, h], kind="stable")
            keep = np.zeros(net.n_inputs, dtype=bool)
            keep[order[:target]] = True
            net.mask[:, h] &= keep
        net.w1 *= net.mask
        if epochs:
            fit(net, state.dataset, epochs=epochs, learning_rate=learning_rate,
                batch_size=batch_size, seed=[seed, 2, step_idx])

    net.retained = [np.flatnonzero(net.mask[:, h]) for h in range(net.n_hidden)]

    report = {
        "phase": 2,
        "n_keep": int(n_keep),
        "steps": int(steps),
        "metric": metric,
        "schedule": [int(t) for t in targets],
        "params": int(net.params()),
        "holdout_accuracy": float(net.accuracy(*state.dataset.subset("holdout"))),
    }
    return replace(state, phase=2, network=net, prune_schedule=tuple(targets),
                   reports=state.reports + (report,))


# ---------------------------------------------------------------------------
# phase 3: merging into shared buckets


def _pairwise_l2(u: np.ndarray) -> np.ndarray:
    diff = u[:, None, :] - u[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))


def _assignment_cost(dist, medoids):
    d = dist[:, medoids]
    assign = d.argmin(axis=1)
    return float(d[np.arange(len(dist)), assign].sum()), assign


def k_medoids(vectors: np.ndarray, k: int, exhaustive_limit: int = 20000):
    """Cluster row vectors around k of their own members under L2.

    Small problems (at most ``exhaustive_limit`` candidate medoid sets)
    are solved exactly by enumeration; larger ones fall back to the
    greedy build + best-improvement swap heuristic.  Returns ascending
    medoid row indices, the assignment of every row to a medoid slot,
    and the total assignment cost.  Ties go to the earliest candidate.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    n = len(vectors)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    dist = _pairwise_l2(vectors)

    if math.comb(n, k) <= exhaustive_limit:
        best = None
        for combo in itertools.combinations(range(n), k):
            cost, assign = _assignment_cost(dist, list(combo))
            if best is None or cost < best[0]:
                best = (cost, list(combo), assign)
        cost, medoids, assign = best
        return medoids, assign, cost

    medoids = [int(dist.sum(axis=1).argmin())]
    while len(medoids) < k:
        current = dist[:, medoids].min(axis=1)
        best_c, best_cost = None, None
        for c in range(n):
            if c in medoids:
                continue
            trial_cost = float(np.minimum(current, dist[:, c]).sum())
            if best_cost is None or trial_cost < best_cost:
                best_c, best_cost = c, trial_cost
        medoids.append(best_c)
    cost, _ = _assignment_cost(dist, medoids)
    improved = True
    while improved:
        improved = False
        for slot in range(k):
            for c in range(n):
                if c in medoids:
                    continue
                trial = list(medoids)
                trial[slot] = c
                trial_cost, _ = _assignment_cost(dist, trial)
                if trial_cost < cost:
                    medoids, cost, improved = trial, trial_cost, True
    medoids = sorted(medoids)
    cost, assign = _assignment_cost(dist, medoids)
    return medoids, assign, cost


def phase3_merge(state: PhaseState, k: int) -> PhaseState:
    """Tie the hidden neurons' retained weight vectors to k shared buckets.

    Vectors are compared by shape: each is scaled to unit L2 norm before
    k-medoids clustering, so [1.2, 0.6, 0.3] and [2, 1, 0.5] coincide
    while [1, 0.9, 0.8] sits apart.  Every bucket's shared vector starts
    as its medoid's raw (unnormalized) weights; members train it jointly
    from then on.
    """
    _require_phase(state, 2, "phase3_merge")
    net: GrownClassifier = state.network.clone()
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > net.n_hidden:
        raise ValueError(f"k={k} exceeds the {net.n_hidden} hidden neurons")

    w1m = net.materialized_w1()
    vectors = np.stack([w1m[net.retained[h], h] for h in range(net.n_hidden)])
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    unit = vectors / np.maximum(norms, 1e-12)

    medoids, assign, cost = k_medoids(unit, k)
    buckets = [
        WeightBucket(bucket_id=b, vector=vectors[medoids[b]].copy(),
                     members=[int(h) for h in np.flatnonzero(assign == b)])
        for b in range(k)
    ]
    net.buckets = buckets
    net.assignment = np.asarray(assign)
    net.w1 = net.materialized_w1()

    report = {
        "phase": 3,
        "k": int(k),
        "bucket_sizes": [len(b.members) for b in buckets],
        "merge_cost": float(cost),
        "params": int(net.params()),
        "holdout_accuracy": float(net.accuracy(*state.dataset.subset("holdout"))),
    }
    return replace(state, phase=3, network=net, reports=state.reports + (report,))


# ---------------------------------------------------------------------------
# phase 4: output re-initialization and final retraining


def phase4_reinit_retrain(state: PhaseState, *, epochs: int = 60,
                          patience: int = 5, learning_rate: float = 0.05,
                          batch_size: int = 64, seed: int = 0) -> PhaseState:
    """Re-solve the output layer against the phase-0 reference, then retrain.

    The second-layer weights and biases are the least-squares solution
    mapping the merged hidden activations on the probe batch back to the
    reference logits.  A rank-deficient system falls back to ridge
    regression (lambda 1e-6) and says so in the report, along with the
    RMS residual of whichever solution was used.
    """
    _require_phase(state, 3, "phase4_reinit_retrain")
    net: GrownClassifier = state.network.clone()

    hidden = _apply_activation(
        state.probe_x @ net.materialized_w1() + net.b1, net.activation
    )
    a = np.hstack([hidden, np.ones((len(hidden), 1))])
    theta, _, rank, _ = np.linalg.lstsq(a, state.reference_logits, rcond=None)
    ridge = rank < a.shape[1]
    if ridge:
        gram = a.T @ a + RIDGE_LAMBDA * np.eye(a.shape[1])
        theta = np.linalg.solve(gram, a.T @ state.reference_logits)
    residual = float(np.sqrt(np.mean((a @ theta - state.reference_logits) ** 2)))

    net.w2 = theta[:-1]
    net.b2 = theta[-1]

    if epochs:
        fit(net, state.dataset, epochs=epochs, learning_rate=learning_rate,
            batch_size=batch_size, patience=patience, seed=[seed, 4, 1])

    report = {
        "phase": 4,
        "residual": residual,
        "ridge": bool(ridge),
        "params": int(net.params()),
        "holdout_accuracy": float(net.accuracy(*state.dataset.subset("holdout"))),
        "param_ratio": float(net.params() / state.base_params),
    }
    if ridge:
        report["ridge_lambda"] = RIDGE_LAMBDA
    return replace(state, phase=4, network=net, reports=state.reports + (report,))


# ---------------------------------------------------------------------------
# pipeline driver


@dataclass
class FineGrainedResult:
    """Final network plus the per-phase JSON reports."""

    network: GrownClassifier
    selected: np.ndarray
    reports: list[dict]
    base_accuracy: float
    final_accuracy: float
    base_params: int
    final_params: int

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Scores for full-width feature rows; the selection is applied here."""
        return self.network.logits(np.asarray(x)[:, self.selected])

    def to_report(self) -> dict:
        return {
            "phases": list(self.reports),
            "base_accuracy": self.base_accuracy,
            "final_accuracy": self.final_accuracy,
            "base_params": self.base_params,
            "final_params": self.final_params,
            "param_ratio": self.final_params / self.base_params,
        }


def run_finegrained(source, dataset, *, q: float = 1.0, replication: int = 3,
                    n_keep: int | None = None, k: int | None = None,
                    prune_steps: int = 2, metric: str = "change",
                    activation: str = "relu", seed: int = 0,
                    probe_size: int = 256, phase0_epochs: int = 60,
                    grow_epochs: int = 3, prune_epochs: int = 2,
                    final_epochs: int = 60, patience: int = 5,
                    learning_rate: float = 0.1,
                    batch_size: int = 64) -> FineGrainedResult:
    """Run all five stages in order and collect their reports.

    ``n_keep`` defaults to at most 8 retained inputs per hidden neuron
    and ``k`` to at most 4 buckets, both clipped to what the grown layer
    actually has.
    """
    state = phase0_select(source, dataset, q=q, probe_size=probe_size,
                          epochs=phase0_epochs, patience=patience,
                          learning_rate=learning_rate, batch_size=batch_size,
                          seed=seed)
    state = phase1_grow(state, replication, activation=activation,
                        epochs=grow_epochs, learning_rate=learning_rate / 2,
                        batch_size=batch_size, seed=seed)
    n_sel = state.network.n_inputs
    if n_keep is None:
        n_keep = max(1, min(8, n_sel))
    if k is None:
        k = max(1, min(4, state.network.n_hidden))
    state = phase2_prune(state, n_keep, prune_steps, metric=metric,
                         epochs=prune_epochs, learning_rate=learning_rate / 2,
                         batch_size=batch_size, seed=seed)
    state = phase3_merge(state, k)
    state = phase4_reinit_retrain(state, epochs=final_epochs, patience=patience,
                                  learning_rate=learning_rate / 2,
                                  batch_size=batch_size, seed=seed)
    return FineGrainedResult(
        network=state.network,
        selected=state.selected,
        reports=list(state.reports),
        base_accuracy=state.base_accuracy,
        final_accuracy=state.reports[-1]["holdout_accuracy"],
        base_params=state.base_params,
        final_params=state.network.params(),
    )
