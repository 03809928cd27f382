"""Dense CNN building blocks with hand-written adjoints.

All functions operate on batches in NCHW layout and float64. Each forward
returns ``(output, cache)``; the matching backward consumes the cache.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from spn.errors import ConfigError, InputError


@dataclass
class ConvLayer:
    weight: np.ndarray  # (out, in, kh, kw)
    bias: np.ndarray  # (out,)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ConfigError(f"conv weight must be 4-D, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ConfigError(
                f"bias shape {self.bias.shape} does not match {self.weight.shape[0]} filters"
            )
        if self.stride < 1 or self.padding < 0:
            raise ConfigError("stride must be >= 1 and padding >= 0")

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        _, _, kh, kw = self.weight.shape
        span_h = h + 2 * self.padding - kh
        span_w = w + 2 * self.padding - kw
        if span_h < 0 or span_w < 0 or span_h % self.stride or span_w % self.stride:
            raise ConfigError(
                f"input {h}x{w} incompatible with kernel {kh}x{kw}, "
                f"stride {self.stride}, padding {self.padding}"
            )
        return span_h // self.stride + 1, span_w // self.stride + 1


def _batched(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim - 1:
        return x[None], True
    return x, False


def conv2d_forward(x, layer: ConvLayer):
    """Cross-correlation of every input channel with every filter, plus bias."""
    x, single = _batched(x, 4)
    b, c, h, w = x.shape
    out_c, in_c, kh, kw = layer.weight.shape
    if c != in_c:
        raise ConfigError(f"conv expects {in_c} input channels, got {c}")
    ho, wo = layer.output_size(h, w)
    p, s = layer.padding, layer.stride
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    # (B, Ho, Wo, C*kh*kw) patch matrix
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho, wo, c * kh * kw)
    out = cols @ layer.weight.reshape(out_c, -1).T + layer.bias
    out = out.transpose(0, 3, 1, 2)
    cache = (cols, x.shape, single)
    return (out[0] if single else np.ascontiguousarray(out)), cache


def conv2d_backward(dout, cache, layer: ConvLayer):
    """Return ``(dx, dW, db)`` for the forward that produced ``cache``."""
    cols, xshape, single = cache
    dout = np.asarray(dout, dtype=np.float64)
    if single:
        dout = dout[None]
    b, c, h, w = xshape
    out_c, _, kh, kw = layer.weight.shape
    p, s = layer.padding, layer.stride
    dy = dout.transpose(0, 2, 3, 1)  # (B, Ho, Wo, out)
    ho, wo = dy.shape[1:3]
    dW = np.tensordot(dy, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(layer.weight.shape)
    db = dy.sum(axis=(0, 1, 2))
    dcols = (dy @ layer.weight.reshape(out_c, -1)).reshape(b, ho, wo, c, kh, kw)
    dxp = np.zeros((b, c, h + 2 * p, w + 2 * p))
    for di in range(kh):
        for dj in range(kw):
            dxp[:, :, di : di + s * ho : s, dj : dj + s * wo : s] += dcols[
                :, :, :, :, di, dj
            ].transpose(0, 3, 1, 2)
    dx = dxp[:, :, p : p + h, p : p + w] if p else dxp
    return (dx[0] if single else dx), dW, db


def relu_forward(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout, mask):
    return np.where(mask, dout, 0.0)


def maxpool2_forward(x):
    """2x2 non-overlapping max; ties go to the first cell in row-major order."""
    x, single = _batched(x, 4)
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"maxpool2 needs even spatial size, got {h}x{w}")
    win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(b, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)  # argmax returns the first maximum
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    cache = (idx, x.shape, single)
    return (out[0] if single else out), cache


def maxpool2_backward(dout, cache):
    idx, xshape, single = cache
    dout = np.asarray(dout, dtype=np.float64)
    if single:
        dout = dout[None]
    b, c, h, w = xshape
    dwin = np.zeros((b, c, h // 2, w // 2, 4))
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    dx = dwin.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    dx = dx.reshape(b, c, h, w)
    return dx[0] if single else dx


def global_avg_pool_forward(x):
    x = np.asarray(x, dtype=np.float64)
    return x.mean(axis=(-2, -1)), x.shape


def global_avg_pool_backward(dout, shape):
    h, w = shape[-2:]
    dout = np.asarray(dout, dtype=np.float64)
    return np.broadcast_to(dout[..., None, None] / (h * w), shape).copy()


def fc_forward(f, weight, bias):
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise InputError(
            f"fully connected shapes disagree: features {f.shape}, "
            f"weight {weight.shape}, bias {bias.shape}"
        )
    return f @ weight.T + bias, f


def fc_backward(dout, f, weight):
    """Return ``(df, dW, db)``; leading batch axes are summed for dW, db."""
    dout = np.asarray(dout, dtype=np.float64)
    df = dout @ weight
    d2 = dout.reshape(-1, dout.shape[-1])
    f2 = f.reshape(-1, f.shape[-1])
    return df, d2.T @ f2, d2.sum(axis=0)


def softmax_cross_entropy(logits, target: int):
    """Loss and gradient for a single sample with one true class."""
    logits = np.asarray(logits, dtype=np.float64)
    c = logits.shape[-1]
    if not 0 <= int(target) < c:
        raise InputError(f"label {target} out of range for {c} classes")
    z = logits - logits.max()
    logp = z - np.log(np.exp(z).sum())
    grad = np.exp(logp)
    grad[int(target)] -= 1.0
    return float(-logp[int(target)]), grad


def sigmoid_cross_entropy(logits, targets):
    """Summed per-class binary cross-entropy; ``targets`` is a 0/1 vector."""
    logits = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape or np.any((t != 0) & (t != 1)):
        raise InputError("sigmoid targets must be a binary vector matching the logits")
    # log(1 + exp(-|x|)) form is stable for large |x|
    loss = np.maximum(logits, 0) - logits * t + np.log1p(np.exp(-np.abs(logits)))
    prob = np.where(
        logits >= 0,
        1.0 / (1.0 + np.exp(-np.abs(logits))),
        np.exp(-np.abs(logits)) / (1.0 + np.exp(-np.abs(logits))),
    )
    return float(loss.sum()), prob - t


def loss(logits, target, mode: str = "softmax"):
    if mode == "softmax":
        return softmax_cross_entropy(logits, target)
    if mode == "sigmoid":
        return sigmoid_cross_entropy(logits, target)
    raise ConfigError(f"unknown loss mode {mode!r}")
