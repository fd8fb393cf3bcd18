"""LSTM cell and sequence passes with full backpropagation through time.

Gate layout along the last weight axis is (input, forget, candidate, output),
each block `hidden` wide. Weights: wx (in_dim, 4H), wh (H, 4H), b (4H,).
"""

import numpy as np

from neunets.errors import DimensionError
from neunets.nn.ops import as_f32, F32


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_step(x_t, h_prev, c_prev, wx, wh, b):
    """One cell update; returns (h_t, c_t, cache)."""
    x_t, h_prev, c_prev = as_f32(x_t), as_f32(h_prev), as_f32(c_prev)
    hidden = wh.shape[0]
    if wx.shape != (x_t.shape[1], 4 * hidden) or wh.shape != (hidden, 4 * hidden):
        raise DimensionError(
            f"lstm weights {wx.shape}/{wh.shape} inconsistent with hidden={hidden}"
        )
    if h_prev.shape[1] != hidden or c_prev.shape[1] != hidden:
        raise DimensionError("lstm state width does not match declared hidden size")
    z = x_t @ wx + h_prev @ wh + b
    i = _sigmoid(z[:, :hidden])
    f = _sigmoid(z[:, hidden : 2 * hidden])
    g = np.tanh(z[:, 2 * hidden : 3 * hidden])
    o = _sigmoid(z[:, 3 * hidden :])
    c_t = f * c_prev + i * g
    tc = np.tanh(c_t)
    h_t = o * tc
    cache = (x_t, h_prev, c_prev, i, f, g, o, tc)
    return h_t.astype(F32), c_t.astype(F32), cache


def lstm_sequence_forward(x, wx, wh, b, h0=None, c0=None):
    """Run the cell over (n, T, d) input; returns (h_all, (h_T, c_T), caches)."""
    x = as_f32(x)
    n, T, _ = x.shape
    hidden = wh.shape[0]
    h = np.zeros((n, hidden), dtype=F32) if h0 is None else as_f32(h0)
    c = np.zeros((n, hidden), dtype=F32) if c0 is None else as_f32(c0)
    h_all = np.empty((n, T, hidden), dtype=F32)
    caches = []
    for t in range(T):
        h, c, cache = lstm_step(x[:, t, :], h, c, wx, wh, b)
        h_all[:, t, :] = h
        caches.append(cache)
    return h_all, (h, c), caches


def lstm_sequence_backward(caches, wx, wh, dh_all=None, dh_last=None, dc_last=None):
    """BPTT over the recorded caches.

    Either a full (n, T, H) gradient on the hidden sequence or a gradient
    on just the final state may be supplied. Returns (dx, dwx, dwh, db).
    """
    T = len(caches)
    n = caches[0][0].shape[0]
    in_dim = wx.shape[0]
    hidden = wh.shape[0]
    dx = np.zeros((n, T, in_dim), dtype=F32)
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * hidden, dtype=F32)
    dh_next = np.zeros((n, hidden), dtype=F32) if dh_last is None else as_f32(dh_last)
    dc_next = np.zeros((n, hidden), dtype=F32) if dc_last is None else as_f32(dc_last)
    for t in range(T - 1, -1, -1):
        x_t, h_prev, c_prev, i, f, g, o, tc = caches[t]
        dh = dh_next.copy()
        if dh_all is not None:
            dh += dh_all[:, t, :]
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        ).astype(F32)
        dx[:, t, :] = dz @ wx.T
        dwx += x_t.T @ dz
        dwh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dh_next = dz @ wh.T
        dc_next = dc * f
    return dx, dwx, dwh, db
