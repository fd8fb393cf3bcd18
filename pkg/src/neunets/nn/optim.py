"""Gradient-descent optimizers over flat name -> array parameter dicts."""

from dataclasses import dataclass, field

import numpy as np

from neunets.nn.ops import F32


@dataclass
class OptimizerConfig:
    kind: str = "sgd_momentum"  # or "rmsprop"
    learning_rate: float = 0.01
    momentum: float = 0.9
    decay: float = 0.9  # rmsprop squared-gradient decay
    weight_decay: float = 0.0
    batch_size: int = 64

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "decay": self.decay,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        return cls(**d)


class SGDMomentum:
    def __init__(self, config: OptimizerConfig):
        self.config = config
        self._velocity: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        lr = F32(self.config.learning_rate)
        mu = F32(self.config.momentum)
        wd = F32(self.config.weight_decay)
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if wd:
                g = g + wd * p
            v = self._velocity.get(name)
            if v is None:
                v = np.zeros_like(p)
            v = mu * v + g.astype(F32)
            self._velocity[name] = v
            p -= lr * v


class RMSProp:
    def __init__(self, config: OptimizerConfig, eps: float = 1e-8):
        self.config = config
        self.eps = eps
        self._sq: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        lr = F32(self.config.learning_rate)
        rho = F32(self.config.decay)
        wd = F32(self.config.weight_decay)
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if wd:
                g = g + wd * p
            g = g.astype(F32)
            s = self._sq.get(name)
            if s is None:
                s = np.zeros_like(p)
            s = rho * s + (1.0 - rho) * g * g
            self._sq[name] = s
            p -= lr * g / (np.sqrt(s) + F32(self.eps))


def make_optimizer(config: OptimizerConfig):
    if config.kind == "sgd_momentum":
        return SGDMomentum(config)
    if config.kind == "rmsprop":
        return RMSProp(config)
    raise ValueError(f"unknown optimizer kind {config.kind!r}")
