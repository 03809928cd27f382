"""Mini-batch SGD training loop (one walk per image per forward pass)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from spn.errors import DatasetError
from spn.network import Network, batch_loss, spn_backward, spn_forward
from spn.optim import OptimizerConfig, sgd_step

log = logging.getLogger(__name__)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float
    mean_walk_iters: float


@dataclass
class TrainResult:
    net: Network
    velocity: dict
    history: list = field(default_factory=list)


def _check_targets(net: Network, targets) -> None:
    c = net.spec.class_count
    for t in targets:
        if net.spec.loss_mode == "softmax":
            if not 0 <= int(t) < c:
                raise DatasetError(f"label {t} outside [0, {c})")
        elif len(t) != c:
            raise DatasetError(f"multi-label target of length {len(t)} for {c} classes")


def _correct(logits: np.ndarray, targets, mode: str) -> int:
    if mode == "softmax":
        return int(np.sum(logits.argmax(axis=1) == np.asarray(targets)))
    pred = logits > 0
    return int(sum(np.array_equal(p, np.asarray(t) > 0.5) for p, t in zip(pred, targets)))


def train(net: Network, images, targets, opt: OptimizerConfig, velocity: dict | None = None,
          on_epoch=None) -> TrainResult:
    """Train ``net`` in place.

    ``images`` is an (n, C, H, W) array and ``targets`` a list of class ids
    (softmax) or binary vectors (sigmoid). Shuffling is driven by ``opt.seed``.
    """
    images = np.asarray(images, dtype=np.float64)
    n = len(images)
    if n == 0:
        raise DatasetError("cannot train on an empty dataset")
    if len(targets) != n:
        raise DatasetError("images and targets differ in length")
    _check_targets(net, targets)
    rng = np.random.default_rng(opt.seed)
    velocity = {} if velocity is None else velocity
    result = TrainResult(net, velocity)
    for epoch in range(1, opt.epochs + 1):
        order = rng.permutation(n)
        total, correct, iters = 0.0, 0, 0
        for start in range(0, n, opt.batch_size):
            idx = order[start:start + opt.batch_size]
            batch_t = [targets[i] for i in idx]
            logits, cache = spn_forward(net, images[idx])
            loss, d_logits = batch_loss(net, logits, batch_t)
            grads = spn_backward(net, cache, d_logits)
            sgd_step(net.params, grads, velocity, opt)
            total += loss * len(idx)
            correct += _correct(logits, batch_t, net.spec.loss_mode)
            iters += sum(cache.walk_iterations)
        stats = EpochStats(epoch, total / n, correct / n, iters / n)
        result.history.append(stats)
        log.info("epoch %d loss %.4f acc %.3f walk iters %.1f", epoch, stats.loss,
                 stats.accuracy, stats.mean_walk_iters)
        if on_epoch is not None:
            on_epoch(stats)
    return result
