"""SGD with momentum and L2 weight decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from spn.errors import ConfigError


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 2
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")


def sgd_step(params: dict, grads: dict, velocity: dict, cfg: OptimizerConfig):
    """One in-place update of every named tensor.

    ``v <- momentum * v - lr * (g + weight_decay * p)``, then ``p <- p + v``.
    Returns ``(params, velocity)`` for convenience.
    """
    for name, p in params.items():
        g = grads[name]
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        v *= cfg.momentum
        v -= cfg.learning_rate * (g + cfg.weight_decay * p)
        p += v
    return params, velocity
