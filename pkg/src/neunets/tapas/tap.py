"""The train-less accuracy predictor.

Two stacked LSTMs (50 then 100 hidden units) read the standardized
layer-pair encoding as a two-step sequence; the second LSTM's final
state, concatenated with the dataset difficulty score, feeds a
single-unit sigmoid head.  Training regresses the head onto the
measured prefix accuracies with RMSprop (learning rate 1e-3, batch 512,
He-normal initialization) under a mean-squared-error loss.

Prediction rolls the model layer by layer along a chain: the accuracy
predicted for the prefix through layer i is fed into the encoding of
the (i, i+1) pair, and the final value is the estimate for the whole
network.  No training of the candidate happens anywhere in this file.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from neunets import ir, nn
from neunets.errors import GraphValidationError
from neunets.tapas.encode import N_FEATURES, encode_pair, encoding_rows

_Z_CLIP = 30.0  # keeps the sigmoid strictly inside (0, 1) in float64


def _forward(params: dict, x: np.ndarray, dcn: np.ndarray):
    """Batched forward pass over standardized pairs; returns (p, caches)."""
    h1, _, caches1 = nn.lstm_sequence_forward(
        x, params["wx1"], params["wh1"], params["b1"])
    h2, (h2_last, _), caches2 = nn.lstm_sequence_forward(
        h1, params["wx2"], params["wh2"], params["b2"])
    cat = np.concatenate([h2_last, dcn[:, None].astype(np.float32)], axis=1)
    z = cat.astype(np.float64) @ params["w_out"].astype(np.float64)
    z = np.clip(z + params["b_out"], -_Z_CLIP, _Z_CLIP)
    p = 1.0 / (1.0 + np.exp(-z))
    return p[:, 0], (caches1, caches2, cat, p)


@dataclass
class TAPModel:
    """Trained predictor weights plus the standardization statistics."""

    params: dict
    feature_mean: np.ndarray
    feature_std: np.ndarray
    dcn_mean: float
    dcn_std: float
    hidden: tuple = (50, 100)
    train_mse: float = float("nan")
    mse_curve: list = field(default_factory=list)

    def standardize(self, pairs: np.ndarray, dcns: np.ndarray):
        pairs = (np.asarray(pairs, dtype=np.float64)
                 - self.feature_mean) / self.feature_std
        dcns = (np.asarray(dcns, dtype=np.float64)
                - self.dcn_mean) / self.dcn_std
        return pairs.astype(np.float32), dcns

    def predict_pairs(self, pairs: np.ndarray, dcns) -> np.ndarray:
        """Predicted accuracies in (0, 1) for raw (n, 2, 14) pair batches."""
        pairs = np.asarray(pairs, dtype=np.float64)
        if pairs.ndim != 3 or pairs.shape[1:] != (2, N_FEATURES):
            raise GraphValidationError(
                f"expected (n, 2, {N_FEATURES}) pairs, got {pairs.shape}"
            )
        x, d = self.standardize(pairs, np.asarray(dcns, dtype=np.float64))
        p, _ = _forward(self.params, x, d)
        return p


def _expand_records(records) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Every record becomes one (pair, prefix accuracy) example per layer."""
    xs, ys, ds = [], [], []
    for rec in records:
        rows = encoding_rows(rec.chain, rec.input_shape, rec.n_classes)
        a_prev = 1.0 / rec.n_classes
        for k, target in enumerate(rec.accuracies):
            xs.append(encode_pair(rows, k, a_prev))
            ys.append(target)
            ds.append(rec.dcn)
            a_prev = target
    return (np.stack(xs), np.asarray(ys, dtype=np.float64),
            np.asarray(ds, dtype=np.float64))


def _init_params(rng, in_dim: int, hidden: tuple) -> dict:
    h1, h2 = hidden
    return {
        "wx1": nn.he_normal_init((in_dim, 4 * h1), in_dim, rng),
        "wh1": nn.he_normal_init((h1, 4 * h1), h1, rng),
        "b1": nn.zeros_init(4 * h1),
        "wx2": nn.he_normal_init((h1, 4 * h2), h1, rng),
        "wh2": nn.he_normal_init((h2, 4 * h2), h2, rng),
        "b2": nn.zeros_init(4 * h2),
        "w_out": nn.he_normal_init((h2 + 1, 1), h2 + 1, rng),
        "b_out": nn.zeros_init(1),
    }


def train_tap(records, *, epochs: int = 400, seed: int = 0,
              batch_size: int = 512, learning_rate: float = 1e-3,
              hidden: tuple = (50, 100), target_mse: float | None = None) -> TAPModel:
    """Fit the predictor on a band of experiment records.

    Deterministic per seed.  With ``target_mse`` set, training stops at
    the first epoch whose full-set MSE reaches the target.
    """
    records = list(records)
    if not records:
        raise ValueError("cannot train the predictor on an empty record set")
    x_raw, y, dcn_raw = _expand_records(records)

    feature_mean = x_raw.mean(axis=0)
    feature_std = x_raw.std(axis=0)
    feature_std[feature_std < 1e-6] = 1.0
    dcn_mean = float(dcn_raw.mean())
    dcn_std = float(dcn_raw.std())
    if dcn_std < 1e-6:
        dcn_std = 1.0

    model = TAPModel(
        params={}, feature_mean=feature_mean, feature_std=feature_std,
        dcn_mean=dcn_mean, dcn_std=dcn_std, hidden=tuple(hidden),
    )
    x, dcn = model.standardize(x_raw, dcn_raw)

    rng = np.random.default_rng(seed)
    params = _init_params(rng, N_FEATURES, model.hidden)
    model.params = params
    opt = nn.RMSProp(nn.OptimizerConfig(
        kind="rmsprop", learning_rate=learning_rate, batch_size=batch_size))

    n = len(x)
    for _epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, db, yb = x[idx], dcn[idx], y[idx]
            p, (caches1, caches2, cat, p_col) = _forward(params, xb, db)

            dp = (2.0 * (p - yb) / len(idx))[:, None]
            dz = (dp * p_col * (1.0 - p_col)).astype(np.float32)
            grads = {
                "w_out": cat.T @ dz,
                "b_out": dz.sum(axis=0),
            }
            dcat = dz @ params["w_out"].T
            dx2, grads["wx2"], grads["wh2"], grads["b2"] = nn.lstm_sequence_backward(
                caches2, params["wx2"], params["wh2"],
                dh_last=dcat[:, :model.hidden[1]])
            _, grads["wx1"], grads["wh1"], grads["b1"] = nn.lstm_sequence_backward(
                caches1, params["wx1"], params["wh1"], dh_all=dx2)
            opt.step(params, grads)

        p_all, _ = _forward(params, x, dcn)
        mse = float(np.mean((p_all - y) ** 2))
        model.mse_curve.append(mse)
        if target_mse is not None and mse <= target_mse:
            break

    model.train_mse = model.mse_curve[-1]
    return model


def predict_accuracy(tap: TAPModel, chain: list, dcn: float, n_classes: int,
                     input_shape=(32, 32, 3)) -> float:
    """Roll the predictor along a chain; one evaluation per layer.

    The rollout seeds the input pseudo-layer's accuracy with exactly
    1/N_c and feeds each prediction into the next pair's encoding.  The
    argument must be a chain description, not a lowered graph.
    """
    if isinstance(chain, ir.NetworkGraph):
        raise GraphValidationError(
            "predict_accuracy takes a chain description, not a lowered graph"
        )
    if not chain:
        raise GraphValidationError("cannot predict an empty chain")
    rows = encoding_rows(chain, input_shape, n_classes)
    dcn_arr = np.asarray([dcn], dtype=np.float64)
    a = 1.0 / n_classes
    for k in range(len(chain)):
        pair = encode_pair(rows, k, a)
        a = float(tap.predict_pairs(pair[None], dcn_arr)[0])
    return a
