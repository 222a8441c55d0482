"""Dense kernels with explicit forward/backward pairs.

Every differentiable operation in the package reduces to the functions here.
Forward functions are pure and operate on float64 arrays; each ``*_backward``
takes the upstream gradient plus whatever the forward needed and returns
gradients of the same shapes as the inputs. There is no tape: composite
modules call these in reverse order by hand.

``finite_diff_check`` is the central-difference harness used by the gradient
test suite and the ``gradcheck`` CLI subcommand.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ParamTensor:
    """A named learnable array with a same-shape gradient accumulator."""

    __slots__ = ("name", "values", "grad")

    def __init__(self, name: str, values):
        values = np.array(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError(f"non-finite values in parameter {name!r}")
        self.name = name
        self.values = values
        self.grad = np.zeros_like(values)

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def copy_values(self):
        return self.values.copy()

    def __repr__(self):
        return f"ParamTensor({self.name!r}, shape={self.values.shape})"


def _as_f64(x):
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# linear


def linear(x, w, b=None):
    """x @ w (+ b). x: (..., Din), w: (Din, Dout), b: (Dout,) or None."""
    x = _as_f64(x)
    w = _as_f64(w)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(
            f"linear: input width {x.shape[-1]} does not match weight rows {w.shape[0]}"
        )
    y = x @ w
    if b is not None:
        b = _as_f64(b)
        if b.shape != (w.shape[1],):
            raise ValueError(f"linear: bias shape {b.shape} != ({w.shape[1]},)")
        y = y + b
    return y


def linear_backward(grad_y, x, w):
    """Returns (grad_x, grad_w, grad_b). grad_b is summed over all leading axes."""
    grad_y = _as_f64(grad_y)
    x = _as_f64(x)
    w = _as_f64(w)
    grad_x = grad_y @ w.T
    # collapse any leading batch axes before the matmul against x
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_y.reshape(-1, grad_y.shape[-1])
    grad_w = x2.T @ g2
    grad_b = g2.sum(axis=0)
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# softmax


def softmax(x, axis=-1):
    """Row-stable softmax along ``axis``. Raises on non-finite input."""
    x = _as_f64(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax: non-finite input")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=axis, keepdims=True)


def softmax_backward(grad_y, y, axis=-1):
    """Jacobian-vector product through softmax, given the forward output ``y``."""
    grad_y = _as_f64(grad_y)
    y = _as_f64(y)
    dot = (grad_y * y).sum(axis=axis, keepdims=True)
    return y * (grad_y - dot)


# ---------------------------------------------------------------------------
# layer norm


def layer_norm(x, scale, shift, eps=1e-5):
    """Normalize each row of x (last axis) to zero mean, unit variance, then affine."""
    x = _as_f64(x)
    scale = _as_f64(scale)
    shift = _as_f64(shift)
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    xhat = (x - mean) / np.sqrt(var + eps)
    return xhat * scale + shift


def layer_norm_backward(grad_y, x, scale, eps=1e-5):
    """Returns (grad_x, grad_scale, grad_shift); statistics recomputed from x."""
    grad_y = _as_f64(grad_y)
    x = _as_f64(x)
    scale = _as_f64(scale)
    d = x.shape[-1]
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    dxhat = grad_y * scale
    grad_x = inv_std / d * (
        d * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    axes = tuple(range(x.ndim - 1))
    grad_scale = (grad_y * xhat).sum(axis=axes)
    grad_shift = grad_y.sum(axis=axes)
    return grad_x, grad_scale, grad_shift


# ---------------------------------------------------------------------------
# depthwise 1-d convolution (same padding, correlation orientation)


def conv1d_depthwise(x, kernels):
    """Per-channel same-length 1-d convolution.

    x: (C, T), kernels: (C, k) with k odd. Output y[c, t] = sum_j kernels[c, j] *
    xpad[c, t + j] where xpad zero-pads (k-1)/2 on both sides. No kernel flip.
    """
    x = _as_f64(x)
    kernels = _as_f64(kernels)
    c, t = x.shape
    kc, k = kernels.shape
    if k % 2 != 1:
        raise ValueError(f"conv1d_depthwise: kernel length {k} must be odd")
    if kc != c:
        raise ValueError(f"conv1d_depthwise: {kc} kernels for {c} channels")
    half = (k - 1) // 2
    xpad = np.zeros((c, t + 2 * half))
    xpad[:, half : half + t] = x
    y = np.zeros_like(x)
    for j in range(k):
        y += kernels[:, j : j + 1] * xpad[:, j : j + t]
    return y


def conv1d_depthwise_backward(grad_y, x, kernels):
    """Returns (grad_x, grad_kernels)."""
    grad_y = _as_f64(grad_y)
    x = _as_f64(x)
    kernels = _as_f64(kernels)
    c, t = x.shape
    k = kernels.shape[1]
    half = (k - 1) // 2
    xpad = np.zeros((c, t + 2 * half))
    xpad[:, half : half + t] = x
    grad_xpad = np.zeros_like(xpad)
    grad_k = np.zeros_like(kernels)
    for j in range(k):
        grad_k[:, j] = (grad_y * xpad[:, j : j + t]).sum(axis=1)
        grad_xpad[:, j : j + t] += kernels[:, j : j + 1] * grad_y
    grad_x = grad_xpad[:, half : half + t]
    return grad_x, grad_k


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_err: float
    worst_coordinate: tuple[str, int]
    passed: bool
    tol: float = 1e-4

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        name, idx = self.worst_coordinate
        return (
            f"{self.op_name:<28s} max_rel_err={self.max_rel_err:.3e} "
            f"worst={name}[{idx}] {status}"
        )


def finite_diff_check(
    op_name: str,
    loss_fn: Callable[[], float],
    tensors: Sequence[ParamTensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare each tensor's ``.grad`` against central differences of ``loss_fn``.

    The caller runs its forward and backward beforehand so that ``t.grad``
    holds the analytic gradient of the scalar that ``loss_fn`` recomputes from
    the tensors' current values. Every coordinate of every tensor is nudged by
    +/- eps; relative error uses max(|analytic|, |numeric|, 1e-8) as the
    denominator. ``passed`` is true iff the worst coordinate is below ``tol``.
    """
    max_rel = 0.0
    worst = ("", 0)
    for t in tensors:
        analytic = t.grad.reshape(-1)
        flat = t.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_fn()
            flat[i] = orig - eps
            lm = loss_fn()
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * eps)
            a = analytic[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > max_rel:
                max_rel = rel
                worst = (t.name, i)
    return GradCheckReport(op_name, max_rel, worst, max_rel < tol, tol)
