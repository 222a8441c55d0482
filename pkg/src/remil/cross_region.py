"""Cross-region attention through pooled region representatives.

Within-region attention alone never moves information between regions; this
stage adds that path cheaply. Each region is summarized into K representative
vectors by softmax pooling against a learned (D, K) routing matrix, a vanilla
multi-head attention mixes the representatives across regions (one sequence
per slot), and the results are scattered back to instances with two weight
banks derived from the same routing logits: a min-max normalized gate per
slot and a softmax over slots per instance.

With the routing matrix at zero every gate is exactly zero, so the whole
stage outputs zeros and the enclosing residual passes its input through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ParamTensor, softmax, softmax_backward
from .region_attn import AttentionParams, init_attention_params, mha_forward, mha_backward

ATTN_AXES = ("region", "slot")
MINMAX_EPS = 1e-8


@dataclass
class CrossRegionParams:
    phi: ParamTensor  # (D, K) routing matrix
    inner: AttentionParams  # attention across regions, no positional kernels
    attn_axis: str = "region"

    @property
    def slots(self):
        return self.phi.values.shape[1]

    def tensors(self):
        return [self.phi] + self.inner.tensors()


def init_cross_region_params(
    prefix: str,
    d: int,
    slots: int,
    n_head: int,
    rng: np.random.Generator,
    attn_axis="region",
    scale_full_d=False,
) -> CrossRegionParams:
    if slots < 1:
        raise ValueError(f"need at least one representative slot, got {slots}")
    if attn_axis not in ATTN_AXES:
        raise ValueError(f"unknown attention axis {attn_axis!r}")
    return CrossRegionParams(
        phi=ParamTensor(f"{prefix}.phi", np.zeros((d, slots))),
        inner=init_attention_params(f"{prefix}.inner", d, n_head, rng, scale_full_d),
        attn_axis=attn_axis,
    )


@dataclass
class CRWeights:
    combine: np.ndarray  # (R, K, P), softmax over instances p
    dispatch_soft: np.ndarray  # (R, K, P), softmax over slots k
    dispatch_minmax: np.ndarray  # (R, K, P), min-max normalized over p


def cr_weights(zhat, phi):
    """Routing logits and the three weight banks derived from them.

    zhat: (R, P, D) regioned features; phi: (D, K). Returns (CRWeights, logits)
    where logits has shape (R, K, P).
    """
    zhat = np.asarray(zhat, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if zhat.shape[2] != phi.shape[0]:
        raise ValueError(
            f"feature width {zhat.shape[2]} does not match routing rows {phi.shape[0]}"
        )
    logits = np.einsum("rpc,ck->rkp", zhat, phi)
    combine = softmax(logits, axis=-1)
    dispatch_soft = softmax(logits, axis=1)
    lo = logits.min(axis=-1, keepdims=True)
    hi = logits.max(axis=-1, keepdims=True)
    minmax = (logits - lo) / (hi - lo + MINMAX_EPS)
    return CRWeights(combine, dispatch_soft, minmax), logits


def minmax_backward(grad_mm, logits):
    """Gradient of the min-max normalization wrt its logits.

    Extremes route through the first occurrence of min/max; a slice whose
    entries are all equal contributes zero gradient (its forward output is
    the constant 0).
    """
    lo = logits.min(axis=-1, keepdims=True)
    hi = logits.max(axis=-1, keepdims=True)
    denom = hi - lo + MINMAX_EPS
    mm = (logits - lo) / denom
    s = grad_mm.sum(axis=-1, keepdims=True)
    t = (grad_mm * mm).sum(axis=-1, keepdims=True)
    grad = grad_mm / denom
    i_lo = logits.argmin(axis=-1, keepdims=True)
    i_hi = logits.argmax(axis=-1, keepdims=True)
    lo_add = -(s - t) / denom
    hi_add = -t / denom
    np.put_along_axis(grad, i_lo, np.take_along_axis(grad, i_lo, -1) + lo_add, -1)
    np.put_along_axis(grad, i_hi, np.take_along_axis(grad, i_hi, -1) + hi_add, -1)
    return np.where(hi == lo, 0.0, grad)


def region_representatives(zhat, combine):
    """R[r, k] = sum_p combine[r, k, p] * zhat[r, p]."""
    return np.einsum("rkp,rpc->rkc", combine, zhat)


def cross_region_attention(rep, params: CrossRegionParams):
    """Vanilla multi-head attention mixing representatives.

    axis "region": one sequence per slot k over the R regions (default).
    axis "slot": one sequence per region over the K slots.
    Returns (rhat, caches).
    """
    r, k, d = rep.shape
    rhat = np.empty_like(rep)
    caches = []
    if params.attn_axis == "region":
        for kk in range(k):
            y, c = mha_forward(rep[:, kk, :], params.inner)
            rhat[:, kk, :] = y
            caches.append(c)
    else:
        for rr in range(r):
            y, c = mha_forward(rep[rr], params.inner)
            rhat[rr] = y
            caches.append(c)
    return rhat, caches


def cross_region_attention_backward(grad_rhat, caches, params: CrossRegionParams):
    grad_rep = np.empty_like(grad_rhat)
    r, k, d = grad_rhat.shape
    if params.attn_axis == "region":
        for kk in range(k):
            grad_rep[:, kk, :] = mha_backward(grad_rhat[:, kk, :], caches[kk], params.inner)
    else:
        for rr in range(r):
            grad_rep[rr] = mha_backward(grad_rhat[rr], caches[rr], params.inner)
    return grad_rep


def cr_dispatch(rhat, weights: CRWeights):
    """Scatter attended representatives back to instances.

    tmp[r,k,p] = minmax[r,k,p] * rhat[r,k]; out[r,p] = sum_k soft[r,k,p] * tmp[r,k,p].
    """
    tmp = rhat[:, :, None, :] * weights.dispatch_minmax[:, :, :, None]
    return (tmp * weights.dispatch_soft[:, :, :, None]).sum(axis=1)


@dataclass
class CrossRegionCache:
    zhat: np.ndarray
    logits: np.ndarray
    weights: CRWeights
    rep: np.ndarray
    rhat: np.ndarray
    attn_caches: list


def cross_region_mix(zhat, params: CrossRegionParams):
    """Full pooled-attend-scatter pipeline on a regioned (R, P, D) array."""
    weights, logits = cr_weights(zhat, params.phi.values)
    rep = region_representatives(zhat, weights.combine)
    rhat, attn_caches = cross_region_attention(rep, params)
    out = cr_dispatch(rhat, weights)
    return out, CrossRegionCache(np.asarray(zhat, float), logits, weights, rep, rhat, attn_caches)


def cross_region_mix_backward(grad_out, cache: CrossRegionCache, params: CrossRegionParams):
    """Accumulates phi/attention grads in place; returns grad wrt zhat."""
    w = cache.weights
    rhat = cache.rhat
    # dispatch: out = sum_k soft * minmax * rhat
    tmp = rhat[:, :, None, :] * w.dispatch_minmax[:, :, :, None]
    grad_tmp = grad_out[:, None, :, :] * w.dispatch_soft[:, :, :, None]
    grad_soft = (grad_out[:, None, :, :] * tmp).sum(axis=-1)
    grad_rhat = (grad_tmp * w.dispatch_minmax[:, :, :, None]).sum(axis=2)
    grad_mm = (grad_tmp * rhat[:, :, None, :]).sum(axis=-1)

    grad_rep = cross_region_attention_backward(grad_rhat, cache.attn_caches, params)

    grad_combine = np.einsum("rkc,rpc->rkp", grad_rep, cache.zhat)
    grad_zhat = np.einsum("rkp,rkc->rpc", w.combine, grad_rep)

    grad_logits = softmax_backward(grad_combine, w.combine, axis=-1)
    grad_logits += softmax_backward(grad_soft, w.dispatch_soft, axis=1)
    grad_logits += minmax_backward(grad_mm, cache.logits)

    grad_zhat += np.einsum("rkp,ck->rpc", grad_logits, params.phi.values)
    params.phi.grad += np.einsum("rpc,rkp->ck", cache.zhat, grad_logits)
    return grad_zhat
