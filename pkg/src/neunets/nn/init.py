"""Weight initializers. Every sampler takes an explicit seed or Generator."""

import numpy as np

from neunets.nn.ops import F32


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def he_normal_init(shape, fan_in: int, seed) -> np.ndarray:
    """Normal(0, sqrt(2 / fan_in)) samples, reproducible per seed."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    std = np.sqrt(2.0 / fan_in)
    return _rng(seed).normal(0.0, std, size=shape).astype(F32)


def uniform_init(shape, low: float, high: float, seed) -> np.ndarray:
    return _rng(seed).uniform(low, high, size=shape).astype(F32)


def zeros_init(shape) -> np.ndarray:
    return np.zeros(shape, dtype=F32)
