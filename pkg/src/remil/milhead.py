"""Gated attention pooling and the bag classifier.

The head scores every instance with a gated two-branch MLP, softmax-normalizes
the scores into attention weights, pools the weighted instances into one bag
vector, and classifies it linearly. A plain (ungated) tanh scorer is kept
behind a flag for ablation.

Pooling must not depend on instance order, not even in the last bit. Two
things make that hold. Per-instance projections and scores are computed one
row at a time, so an instance's numbers depend only on its own bits, never on
where it sits in the bag (batched BLAS calls break this: tail rows can take a
differently-rounded kernel). The reductions over instances - the softmax
normalizer and each pooled coordinate - use ``math.fsum``, which returns the
correctly rounded sum regardless of summand order. Gradients do not need the
property and use ordinary numpy reductions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import ParamTensor


@dataclass
class MILHeadParams:
    v: ParamTensor  # (D, Dh) tanh branch
    u: ParamTensor  # (D, Dh) sigmoid gate branch
    w: ParamTensor  # (Dh,) score vector
    wc: ParamTensor  # (D, C) classifier
    bc: ParamTensor  # (C,)
    gated: bool = True

    def tensors(self):
        out = [self.v, self.w, self.wc, self.bc]
        if self.gated:
            out.insert(1, self.u)
        return out


def init_milhead_params(
    prefix: str, d: int, hidden: int, n_classes: int, rng: np.random.Generator, gated=True
) -> MILHeadParams:
    if n_classes < 2:
        raise ValueError(f"need at least two classes, got {n_classes}")
    bd = 1.0 / math.sqrt(d)
    bh = 1.0 / math.sqrt(hidden)
    return MILHeadParams(
        v=ParamTensor(f"{prefix}.v", rng.uniform(-bd, bd, size=(d, hidden))),
        u=ParamTensor(f"{prefix}.u", rng.uniform(-bd, bd, size=(d, hidden))),
        w=ParamTensor(f"{prefix}.w", rng.uniform(-bh, bh, size=hidden)),
        wc=ParamTensor(f"{prefix}.wc", rng.uniform(-bd, bd, size=(d, n_classes))),
        bc=ParamTensor(f"{prefix}.bc", np.zeros(n_classes)),
        gated=gated,
    )


def _fsum_rows(weighted):
    """Column sums of a (I, D) array via fsum, exact and order-invariant."""
    return np.array([math.fsum(col) for col in weighted.T])


def _rows_matmul(z, m):
    """z @ m computed row by row; each output row's bits depend only on its
    input row, so permuting instances permutes rows bit-for-bit."""
    out = np.empty((z.shape[0], m.shape[1]))
    for i in range(z.shape[0]):
        out[i] = z[i] @ m
    return out


@dataclass
class HeadCache:
    z: np.ndarray
    t: np.ndarray
    sg: np.ndarray | None
    scores: np.ndarray
    alpha: np.ndarray
    bag: np.ndarray


@dataclass
class BagPrediction:
    logits: np.ndarray  # (C,)
    probs: np.ndarray  # (C,)
    attention: np.ndarray  # (I,)
    predicted: int


def gated_attention_pool(z, params: MILHeadParams):
    """Returns (bag, alpha, cache) for a (I, D) bag."""
    z = np.asarray(z, dtype=np.float64)
    t = np.tanh(_rows_matmul(z, params.v.values))
    if params.gated:
        sg = 1.0 / (1.0 + np.exp(-_rows_matmul(z, params.u.values)))
        gate = t * sg
    else:
        sg = None
        gate = t
    scores = np.array([float(row @ params.w.values) for row in gate])
    ex = np.exp(scores - scores.max())
    alpha = ex / math.fsum(ex)
    bag = _fsum_rows(alpha[:, None] * z)
    return bag, alpha, HeadCache(z, t, sg, scores, alpha, bag)


def head_forward(z, params: MILHeadParams):
    bag, alpha, cache = gated_attention_pool(z, params)
    logits = bag @ params.wc.values + params.bc.values
    shifted = np.exp(logits - logits.max())
    probs = shifted / shifted.sum()
    pred = BagPrediction(logits, probs, alpha, int(np.argmax(logits)))
    return pred, cache


def head_backward(grad_logits, cache: HeadCache, params: MILHeadParams):
    """Accumulates head parameter grads; returns grad wrt the (I, D) input."""
    z, alpha = cache.z, cache.alpha
    grad_bag = params.wc.values @ grad_logits
    params.wc.grad += np.outer(cache.bag, grad_logits)
    params.bc.grad += grad_logits

    grad_alpha = z @ grad_bag
    grad_z = np.outer(alpha, grad_bag)
    grad_scores = alpha * (grad_alpha - float(alpha @ grad_alpha))

    if params.gated:
        gate_t = grad_scores[:, None] * params.w.values * cache.sg
        gate_u = grad_scores[:, None] * params.w.values * cache.t
        params.w.grad += (cache.t * cache.sg).T @ grad_scores
        grad_pre_u = gate_u * cache.sg * (1.0 - cache.sg)
        params.u.grad += z.T @ grad_pre_u
        grad_z += grad_pre_u @ params.u.values.T
    else:
        gate_t = grad_scores[:, None] * params.w.values
        params.w.grad += cache.t.T @ grad_scores
    grad_pre_v = gate_t * (1.0 - cache.t * cache.t)
    params.v.grad += z.T @ grad_pre_v
    grad_z += grad_pre_v @ params.v.values.T
    return grad_z


def bag_loss(logits, label: int):
    """Cross-entropy via log-sum-exp; returns (loss, grad_logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    c = logits.shape[0]
    if not 0 <= label < c:
        raise ValueError(f"label {label} out of range for {c} classes")
    m = logits.max()
    lse = m + math.log(np.exp(logits - m).sum())
    loss = lse - logits[label]
    grad = np.exp(logits - lse)
    grad[label] -= 1.0
    return loss, grad
