"""Forward/backward implementations for every layer kind.

All spatial ops use NHWC activations and (k1, k2, in, out) kernels.
Padding modes: "same" keeps ceil(dim / stride), "valid" keeps
floor((dim - k) / stride) + 1. One multiply-add counts as 2 FLOPs in the
cost model built on top of these ops.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from neunets.errors import DimensionError

F32 = np.float32


def as_f32(x) -> np.ndarray:
    """Cast to a C-contiguous float32 array."""
    return np.ascontiguousarray(x, dtype=F32)


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise DimensionError(f"{what} contains non-finite values")
    return x


def conv_output_dim(size: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-size // stride)  # ceil
    if padding == "valid":
        out = (size - k) // stride + 1
        if out < 1:
            raise DimensionError(f"kernel {k} larger than input {size} with valid padding")
        return out
    raise DimensionError(f"unknown padding mode {padding!r}")


def _pad_amounts(size: int, k: int, stride: int, padding: str):
    if padding == "valid":
        return 0, 0
    out = conv_output_dim(size, k, stride, padding)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _im2col(x: np.ndarray, k1: int, k2: int, stride: int, padding: str, pad_value: float = 0.0):
    """Extract sliding patches, shape (n, oh, ow, k1, k2, c)."""
    n, h, w, c = x.shape
    pt, pb = _pad_amounts(h, k1, stride, padding)
    pl, pr = _pad_amounts(w, k2, stride, padding)
    oh = conv_output_dim(h, k1, stride, padding)
    ow = conv_output_dim(w, k2, stride, padding)
    if pt or pb or pl or pr:
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=pad_value)
    else:
        xp = x
    s0, s1, s2, s3 = xp.strides
    patches = as_strided(
        xp,
        shape=(n, oh, ow, k1, k2, c),
        strides=(s0, s1 * stride, s2 * stride, s1, s2, s3),
    )
    return np.ascontiguousarray(patches), (xp.shape, pt, pl, oh, ow)


def _col2im(dpatches: np.ndarray, x_shape, xp_shape, pt: int, pl: int, stride: int):
    """Scatter patch gradients back onto the (unpadded) input."""
    n, h, w, c = x_shape
    _, oh, ow, k1, k2, _ = dpatches.shape
    dxp = np.zeros(xp_shape, dtype=F32)
    for a in range(k1):
        for b in range(k2):
            dxp[:, a : a + oh * stride : stride, b : b + ow * stride : stride, :] += dpatches[
                :, :, :, a, b, :
            ]
    return dxp[:, pt : pt + h, pl : pl + w, :]


# ---------------------------------------------------------------------------
# convolution


def conv_forward(x, w, b=None, stride: int = 1, padding: str = "same"):
    """Cross-correlation of NHWC input with (k1,k2,i,o) weights.

    Returns (y, cache); y has shape (n, oh, ow, o).
    """
    x = as_f32(x)
    w = as_f32(w)
    k1, k2, ci, co = w.shape
    if x.ndim != 4:
        raise DimensionError(f"conv input must be 4-d NHWC, got shape {x.shape}")
    if x.shape[3] != ci:
        raise DimensionError(f"conv expects {ci} input channels, got {x.shape[3]}")
    patches, (xp_shape, pt, pl, oh, ow) = _im2col(x, k1, k2, stride, padding)
    cols = patches.reshape(-1, k1 * k2 * ci)
    y = cols @ w.reshape(-1, co)
    if b is not None:
        y += b
    y = y.reshape(x.shape[0], oh, ow, co)
    cache = (cols, w, b is not None, x.shape, xp_shape, pt, pl, stride, (k1, k2, ci, co), (oh, ow))
    return y, cache


def conv_backward(cache, dy):
    cols, w, has_bias, x_shape, xp_shape, pt, pl, stride, wshape, (oh, ow) = cache
    k1, k2, ci, co = wshape
    dy2 = as_f32(dy).reshape(-1, co)
    dw = (cols.T @ dy2).reshape(k1, k2, ci, co)
    db = dy2.sum(axis=0) if has_bias else None
    dcols = dy2 @ w.reshape(-1, co).T
    dpatches = dcols.reshape(x_shape[0], oh, ow, k1, k2, ci)
    dx = _col2im(dpatches, x_shape, xp_shape, pt, pl, stride)
    return dx, dw, db


def separable_conv_forward(x, w_depth, w_point, b=None, stride: int = 1, padding: str = "same"):
    """Depthwise (k1,k2,i) spatial pass followed by a 1x1 (1,1,i,o) projection."""
    x = as_f32(x)
    w_depth = as_f32(w_depth)
    w_point = as_f32(w_point)
    k1, k2, ci = w_depth.shape
    if x.shape[3] != ci:
        raise DimensionError(f"depthwise expects {ci} channels, got {x.shape[3]}")
    if w_point.shape[:3] != (1, 1, ci):
        raise DimensionError(f"pointwise must be (1,1,{ci},o), got {w_point.shape}")
    patches, (xp_shape, pt, pl, oh, ow) = _im2col(x, k1, k2, stride, padding)
    mid = np.einsum("nhwabc,abc->nhwc", patches, w_depth, optimize=True)
    co = w_point.shape[3]
    y = mid.reshape(-1, ci) @ w_point.reshape(ci, co)
    if b is not None:
        y += b
    y = y.reshape(x.shape[0], oh, ow, co)
    cache = (patches, mid, w_depth, w_point, b is not None, x.shape, xp_shape, pt, pl, stride)
    return y, cache


def separable_conv_backward(cache, dy):
    patches, mid, w_depth, w_point, has_bias, x_shape, xp_shape, pt, pl, stride = cache
    k1, k2, ci = w_depth.shape
    co = w_point.shape[3]
    dy2 = as_f32(dy).reshape(-1, co)
    dwp = (mid.reshape(-1, ci).T @ dy2).reshape(1, 1, ci, co)
    db = dy2.sum(axis=0) if has_bias else None
    dmid = (dy2 @ w_point.reshape(ci, co).T).reshape(mid.shape)
    dwd = np.einsum("nhwabc,nhwc->abc", patches, dmid, optimize=True)
    dpatches = dmid[:, :, :, None, None, :] * w_depth[None, None, None, :, :, :]
    dx = _col2im(dpatches, x_shape, xp_shape, pt, pl, stride)
    return dx, dwd, dwp, db


# ---------------------------------------------------------------------------
# dense / activations


def dense_forward(x, w, b=None):
    x = as_f32(x)
    w = as_f32(w)
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"dense expects (n,{w.shape[0]}) input, got {x.shape}")
    y = x @ w
    if b is not None:
        y = y + b
    return y, (x, w, b is not None)


def dense_backward(cache, dy):
    x, w, has_bias = cache
    dy = as_f32(dy)
    dw = x.T @ dy
    db = dy.sum(axis=0) if has_bias else None
    dx = dy @ w.T
    return dx, dw, db


def relu_forward(x):
    x = as_f32(x)
    y = np.maximum(x, 0.0)
    return y, (x > 0)


def relu_backward(cache, dy):
    return as_f32(dy) * cache


def softmax_forward(x):
    x = as_f32(x)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return y, y


def softmax_backward(cache, dy):
    y = cache
    dy = as_f32(dy)
    dot = (dy * y).sum(axis=-1, keepdims=True)
    return y * (dy - dot)


# ---------------------------------------------------------------------------
# pooling


def _pool_kernel(k):
    """Pool windows may be square (int) or rectangular ((k1, k2))."""
    if isinstance(k, (tuple, list)):
        return int(k[0]), int(k[1])
    return int(k), int(k)


def maxpool_forward(x, k=2, stride: int = 2, padding: str = "valid"):
    x = as_f32(x)
    k1, k2 = _pool_kernel(k)
    patches, (xp_shape, pt, pl, oh, ow) = _im2col(x, k1, k2, stride, padding, pad_value=-np.inf)
    n, _, _, _, _, c = patches.shape
    flat = patches.reshape(n, oh, ow, k1 * k2, c)
    arg = flat.argmax(axis=3)
    y = np.take_along_axis(flat, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    cache = (arg, x.shape, xp_shape, pt, pl, stride, (k1, k2), (oh, ow))
    return y, cache


def maxpool_backward(cache, dy):
    arg, x_shape, xp_shape, pt, pl, stride, (k1, k2), (oh, ow) = cache
    n, _, _, c = x_shape
    dy = as_f32(dy)
    dflat = np.zeros((n, oh, ow, k1 * k2, c), dtype=F32)
    np.put_along_axis(dflat, arg[:, :, :, None, :], dy[:, :, :, None, :], axis=3)
    dpatches = dflat.reshape(n, oh, ow, k1, k2, c)
    return _col2im(dpatches, x_shape, xp_shape, pt, pl, stride)


def avgpool_forward(x, k=2, stride: int = 2, padding: str = "valid"):
    x = as_f32(x)
    k1, k2 = _pool_kernel(k)
    patches, (xp_shape, pt, pl, oh, ow) = _im2col(x, k1, k2, stride, padding)
    y = patches.mean(axis=(3, 4))
    cache = (x.shape, xp_shape, pt, pl, stride, (k1, k2), (oh, ow))
    return y, cache


def avgpool_backward(cache, dy):
    x_shape, xp_shape, pt, pl, stride, (k1, k2), (oh, ow) = cache
    dy = as_f32(dy) / F32(k1 * k2)
    dpatches = np.broadcast_to(
        dy[:, :, :, None, None, :], (x_shape[0], oh, ow, k1, k2, x_shape[3])
    )
    return _col2im(np.ascontiguousarray(dpatches), x_shape, xp_shape, pt, pl, stride)


def global_avgpool_forward(x):
    x = as_f32(x)
    return x.mean(axis=(1, 2)), x.shape


def global_avgpool_backward(cache, dy):
    n, h, w, c = cache
    dy = as_f32(dy)
    return np.broadcast_to(dy[:, None, None, :] / F32(h * w), (n, h, w, c)).astype(F32)


# ---------------------------------------------------------------------------
# batch norm / dropout


def batchnorm_forward(x, gamma, beta, moving_mean, moving_var, training: bool,
                      momentum: float = 0.9, eps: float = 1e-5):
    """Per-channel normalization over (n, h, w).

    In training mode batch statistics are used and the moving averages are
    updated in place: m <- momentum * m + (1 - momentum) * batch_stat.
    """
    x = as_f32(x)
    axes = tuple(range(x.ndim - 1))
    if training:
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        moving_mean *= F32(momentum)
        moving_mean += F32(1.0 - momentum) * mu
        moving_var *= F32(momentum)
        moving_var += F32(1.0 - momentum) * var
    else:
        mu, var = moving_mean, moving_var
    inv_std = 1.0 / np.sqrt(var + F32(eps))
    xhat = (x - mu) * inv_std
    y = gamma * xhat + beta
    return y.astype(F32), (xhat, inv_std, gamma, training, axes, x.shape)


def batchnorm_backward(cache, dy):
    xhat, inv_std, gamma, training, axes, x_shape = cache
    dy = as_f32(dy)
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    if not training:
        return dy * gamma * inv_std, dgamma, dbeta
    m = np.prod([x_shape[a] for a in axes])
    dxhat = dy * gamma
    dx = (inv_std / m) * (
        m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
    )
    return dx.astype(F32), dgamma, dbeta


def dropout_forward(x, rate: float, training: bool, rng: np.random.Generator | None = None):
    x = as_f32(x)
    if not training or rate <= 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = F32(1.0 - rate)
    mask = (rng.random(x.shape) >= rate).astype(F32) / keep
    return x * mask, mask


def dropout_backward(cache, dy):
    if cache is None:
        return as_f32(dy)
    return as_f32(dy) * cache


# ---------------------------------------------------------------------------
# embedding


def embedding_forward(table, ids):
    """Row lookup: (vocab, d) table indexed by an (n, t) id matrix."""
    ids = np.asarray(ids)
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        raise DimensionError("token id outside embedding table")
    return table[ids], (table.shape, ids)


def embedding_backward(cache, dy):
    (vocab, d), ids = cache
    dtable = np.zeros((vocab, d), dtype=F32)
    np.add.at(dtable, ids.reshape(-1), as_f32(dy).reshape(-1, d))
    return dtable
