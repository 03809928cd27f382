"""Independent reference computations used to verify the fast paths.

Nothing here calls into the power iteration or the vectorized layers: the
stationary distribution is found by Gaussian elimination, derivatives by
central differences, and tensor ops by explicit loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from spn.errors import InputError, NonErgodicError

REL_FLOOR = 1e-12


def stationary_dense(D, pivot_tol: float = 1e-13) -> np.ndarray:
    """Solve ``(D - I) x = 0`` with ``sum(x) = 1`` by elimination.

    The last equation of the singular system is replaced by the
    normalization row, giving a square system that is non-singular exactly
    when the chain has a unique stationary distribution.
    """
    P = np.array(getattr(D, "entries", D), dtype=np.float64)
    if getattr(D, "degenerate", False):
        raise InputError("degenerate transfer matrix has no walk")
    n = P.shape[0]
    A = P - np.eye(n)
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    # forward elimination with partial pivoting
    for col in range(n):
        piv = col + int(np.argmax(np.abs(A[col:, col])))
        if abs(A[piv, col]) < pivot_tol:
            raise NonErgodicError(f"pivot {A[piv, col]:.3g} at column {col}: chain is not ergodic")
        if piv != col:
            A[[col, piv]] = A[[piv, col]]
            rhs[[col, piv]] = rhs[[piv, col]]
        for row in range(col + 1, n):
            f = A[row, col] / A[col, col]
            if f != 0.0:
                A[row, col:] -= f * A[col, col:]
                rhs[row] -= f * rhs[col]
    x = np.zeros(n)
    for row in range(n - 1, -1, -1):
        x[row] = (rhs[row] - A[row, row + 1:] @ x[row + 1:]) / A[row, row]
    return x


def finite_diff_grad(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (perturbed in place, restored)."""
    x = np.asarray(x)
    grad = np.zeros(x.shape, dtype=np.float64)
    bad = []
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            bad.append(idx)
            grad[idx] = np.nan
        else:
            grad[idx] = (fp - fm) / (2.0 * h)
    if bad:
        raise FloatingPointError(f"non-finite evaluations at coordinates {bad[:5]}")
    return grad


def relative_error(a, b, floor: float = REL_FLOOR) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


# naive loop references


def conv2d_naive(x, weight, bias, stride: int = 1, padding: int = 0) -> np.ndarray:
    c, h, w = x.shape
    out_c, in_c, kh, kw = weight.shape
    xp = np.zeros((c, h + 2 * padding, w + 2 * padding))
    xp[:, padding:padding + h, padding:padding + w] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((out_c, ho, wo))
    for o in range(out_c):
        for i in range(ho):
            for j in range(wo):
                s = bias[o]
                for ci in range(in_c):
                    for a in range(kh):
                        for b in range(kw):
                            s += xp[ci, i * stride + a, j * stride + b] * weight[o, ci, a, b]
                out[o, i, j] = s
    return out


def maxpool2_naive(x) -> np.ndarray:
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for k in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[k, i, j] = max(x[k, 2 * i + a, 2 * j + b] for a in (0, 1) for b in (0, 1))
    return out


def mean_naive(x) -> np.ndarray:
    k, h, w = x.shape
    out = np.zeros(k)
    for c in range(k):
        s = 0.0
        for i in range(h):
            for j in range(w):
                s += x[c, i, j]
        out[c] = s / (h * w)
    return out


def fc_naive(f, weight, bias) -> np.ndarray:
    out = np.zeros(weight.shape[0])
    for c in range(weight.shape[0]):
        s = bias[c]
        for k in range(weight.shape[1]):
            s += weight[c, k] * f[k]
        out[c] = s
    return out


@dataclass
class GradCheckReport:
    errors: dict  # tensor name -> max relative error
    tolerance: float
    failed: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failed

    def lines(self) -> list:
        out = [f"{name} max_rel_err={err:.3e} {'FAIL' if name in self.failed else 'ok'}"
               for name, err in self.errors.items()]
        out.append(f"gradcheck tolerance={self.tolerance:g} {'PASS' if self.passed else 'FAIL'}")
        return out


def check_gradients(net, images, targets, tolerance: float = 1e-6, h: float = 1e-5) -> GradCheckReport:
    """Compare backprop with central differences of the loss, proposal maps frozen.

    The forward pass runs once to fix the proposal maps; every perturbed
    evaluation reuses them, so the numeric gradient measures exactly the
    derivative the backward pass implements.
    """
    from spn.network import batch_loss, spn_backward, spn_forward

    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images, targets = images[None], [targets]
    logits, cache = spn_forward(net, images)
    _, d_logits = batch_loss(net, logits, targets)
    analytic = spn_backward(net, cache, d_logits)
    frozen = cache.proposals

    def loss_at(_):
        out, _c = spn_forward(net, images, frozen=frozen)
        return batch_loss(net, out, targets)[0]

    errors, failed = {}, []
    for name, p in net.params.items():
        numeric = finite_diff_grad(loss_at, p, h)
        err = float(relative_error(analytic[name], numeric).max())
        errors[name] = err
        if not err < tolerance:
            failed.append(name)
    return GradCheckReport(errors, tolerance, failed)
