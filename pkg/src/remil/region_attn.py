"""Multi-head self-attention inside square regions.

One set of projection matrices is shared by every region of a bag: each
region's M*M cells form an independent attention sequence, so the whole stage
is equivariant to permuting regions and much cheaper than full attention over
the bag (L*L sequences of length M*M instead of one of length I).

The attention logits can be adjusted by a per-head depthwise 1-d convolution
over the key axis before the softmax ("attn" variant) or added to the value
vectors along the sequence axis ("value" variant); both variants share the
learned (n_head, k) kernel bank and reduce to vanilla attention when the
kernels are zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    ParamTensor,
    conv1d_depthwise,
    conv1d_depthwise_backward,
    softmax,
    softmax_backward,
)
from .region import RegionGeometry, region_flat_indices, region_geometry, regionize, unregionize

MASK_BIAS = -1e30

POS_CONV_VARIANTS = ("attn", "value")


@dataclass
class AttentionParams:
    """Shared Q/K/V/O projections for one multi-head attention site."""

    wq: ParamTensor
    wk: ParamTensor
    wv: ParamTensor
    wo: ParamTensor
    n_head: int
    scale_full_d: bool = False

    @property
    def d(self):
        return self.wq.values.shape[0]

    @property
    def head_dim(self):
        return self.d // self.n_head

    @property
    def scale(self):
        return math.sqrt(self.d if self.scale_full_d else self.head_dim)

    def tensors(self):
        return [self.wq, self.wk, self.wv, self.wo]


def init_attention_params(
    prefix: str, d: int, n_head: int, rng: np.random.Generator, scale_full_d=False
) -> AttentionParams:
    if d % n_head != 0:
        raise ValueError(f"width {d} not divisible by {n_head} heads")
    bound = 1.0 / math.sqrt(d)

    def mat(name):
        return ParamTensor(f"{prefix}.{name}", rng.uniform(-bound, bound, size=(d, d)))

    return AttentionParams(
        wq=mat("wq"),
        wk=mat("wk"),
        wv=mat("wv"),
        wo=mat("wo"),
        n_head=n_head,
        scale_full_d=scale_full_d,
    )


@dataclass
class RegionAttnParams:
    attn: AttentionParams
    pos_conv_kernels: ParamTensor  # (n_head, k), zero-initialized
    use_pos_conv: bool = True
    pos_conv_variant: str = "attn"

    def tensors(self):
        return self.attn.tensors() + [self.pos_conv_kernels]


def init_region_attn_params(
    prefix: str,
    d: int,
    n_head: int,
    pos_conv_k: int,
    rng: np.random.Generator,
    use_pos_conv=True,
    pos_conv_variant="attn",
    scale_full_d=False,
) -> RegionAttnParams:
    if pos_conv_k % 2 != 1:
        raise ValueError(f"positional kernel length {pos_conv_k} must be odd")
    if pos_conv_variant not in POS_CONV_VARIANTS:
        raise ValueError(f"unknown positional-kernel variant {pos_conv_variant!r}")
    return RegionAttnParams(
        attn=init_attention_params(prefix, d, n_head, rng, scale_full_d),
        pos_conv_kernels=ParamTensor(f"{prefix}.pos_conv", np.zeros((n_head, pos_conv_k))),
        use_pos_conv=use_pos_conv,
        pos_conv_variant=pos_conv_variant,
    )


# ---------------------------------------------------------------------------
# head bookkeeping


def split_heads(x, n_head):
    """(P, D) -> (H, P, D/H); head h owns the contiguous column slice h*dh:(h+1)*dh."""
    p, d = x.shape
    return x.reshape(p, n_head, d // n_head).transpose(1, 0, 2)


def merge_heads(xh):
    """(H, P, dh) -> (P, H*dh), inverse of split_heads."""
    h, p, dh = xh.shape
    return xh.transpose(1, 0, 2).reshape(p, h * dh)


def _conv_rows(stacked, kernels):
    """Apply kernel h along the last axis of stacked[h] for every row.

    stacked: (H, P, T); kernels: (H, k). Each of the P rows of head h is a
    channel sharing kernels[h]. Returns same shape.
    """
    hn, p, t = stacked.shape
    k = kernels.shape[1]
    flat = stacked.reshape(hn * p, t)
    kfull = np.repeat(kernels, p, axis=0)
    return conv1d_depthwise(flat, kfull).reshape(hn, p, t)


def _conv_rows_backward(grad_out, stacked, kernels):
    hn, p, t = stacked.shape
    flat = stacked.reshape(hn * p, t)
    kfull = np.repeat(kernels, p, axis=0)
    gx, gk = conv1d_depthwise_backward(grad_out.reshape(hn * p, t), flat, kfull)
    return gx.reshape(hn, p, t), gk.reshape(hn, p, -1).sum(axis=1)


def conv_adjusted_attention(e, kernels):
    """Convolve logits along the key axis per head and renormalize.

    e: (H, P, P) raw scaled dot-product logits; kernels: (H, k). Returns the
    attention weights softmax(e + conv(e)) along the key axis.
    """
    g = e + _conv_rows(e, kernels)
    return softmax(g, axis=-1)


def attention_logits(x, params: AttentionParams, head: int):
    """Raw scaled dot-product logits e = Q_h K_h^T / scale for one head."""
    if not 0 <= head < params.n_head:
        raise ValueError(f"head {head} out of range for {params.n_head} heads")
    dh = params.head_dim
    sl = slice(head * dh, (head + 1) * dh)
    q = x @ params.wq.values[:, sl]
    k = x @ params.wk.values[:, sl]
    return q @ k.T / params.scale


# ---------------------------------------------------------------------------
# one attention sequence


@dataclass
class MHACache:
    x: np.ndarray
    q: np.ndarray  # (H, P, dh)
    k: np.ndarray
    v: np.ndarray
    e: np.ndarray  # (H, P, P) pre-adjustment logits
    alpha: np.ndarray  # (H, P, P) attention weights
    v_used: np.ndarray  # (H, P, dh) values fed to the weighted sum
    heads: np.ndarray  # (H, P, dh)
    concat: np.ndarray  # (P, D)
    key_mask: np.ndarray | None


def mha_forward(x, params: AttentionParams, pos_conv: RegionAttnParams | None = None, key_mask=None):
    """Multi-head attention over one (P, D) sequence.

    ``pos_conv`` carries the optional positional kernels (ignored when None or
    disabled). ``key_mask`` is a boolean (P,) marking keys to suppress.
    Returns (y, cache) with y of shape (P, D).
    """
    x = np.asarray(x, dtype=np.float64)
    h = params.n_head
    q = split_heads(x @ params.wq.values, h)
    k = split_heads(x @ params.wk.values, h)
    v = split_heads(x @ params.wv.values, h)
    e = q @ k.transpose(0, 2, 1) / params.scale

    use_pos_conv = pos_conv is not None and pos_conv.use_pos_conv
    g = e
    if use_pos_conv and pos_conv.pos_conv_variant == "attn":
        g = e + _conv_rows(e, pos_conv.pos_conv_kernels.values)
    if key_mask is not None and key_mask.any():
        g = g + np.where(key_mask, MASK_BIAS, 0.0)
    alpha = softmax(g, axis=-1)

    v_used = v
    if use_pos_conv and pos_conv.pos_conv_variant == "value":
        # convolve each value channel along the sequence axis with the head kernel
        v_used = v + _conv_rows(v.transpose(0, 2, 1), pos_conv.pos_conv_kernels.values).transpose(0, 2, 1)

    heads = alpha @ v_used
    concat = merge_heads(heads)
    y = concat @ params.wo.values
    cache = MHACache(x, q, k, v, e, alpha, v_used, heads, concat, key_mask)
    return y, cache


def mha_backward(grad_y, cache: MHACache, params: AttentionParams, pos_conv: RegionAttnParams | None = None):
    """Accumulates parameter gradients in place; returns grad wrt x."""
    x = cache.x
    use_pos_conv = pos_conv is not None and pos_conv.use_pos_conv

    grad_concat = grad_y @ params.wo.values.T
    params.wo.grad += cache.concat.T @ grad_y

    hn = params.n_head
    grad_heads = split_heads(grad_concat, hn)
    grad_alpha = grad_heads @ cache.v_used.transpose(0, 2, 1)
    grad_v_used = cache.alpha.transpose(0, 2, 1) @ grad_heads

    grad_v = grad_v_used
    if use_pos_conv and pos_conv.pos_conv_variant == "value":
        gconv, gk = _conv_rows_backward(
            grad_v_used.transpose(0, 2, 1),
            cache.v.transpose(0, 2, 1),
            pos_conv.pos_conv_kernels.values,
        )
        pos_conv.pos_conv_kernels.grad += gk
        grad_v = grad_v_used + gconv.transpose(0, 2, 1)

    grad_g = softmax_backward(grad_alpha, cache.alpha, axis=-1)
    grad_e = grad_g
    if use_pos_conv and pos_conv.pos_conv_variant == "attn":
        gconv, gk = _conv_rows_backward(grad_g, cache.e, pos_conv.pos_conv_kernels.values)
        pos_conv.pos_conv_kernels.grad += gk
        grad_e = grad_g + gconv

    grad_q = grad_e @ cache.k / params.scale
    grad_k = grad_e.transpose(0, 2, 1) @ cache.q / params.scale

    grad_x = np.zeros_like(x)
    for gw, w, gh in (
        (params.wq, params.wq.values, grad_q),
        (params.wk, params.wk.values, grad_k),
        (params.wv, params.wv.values, grad_v),
    ):
        gfull = merge_heads(gh)
        gw.grad += x.T @ gfull
        grad_x += gfull @ w.T
    return grad_x


# ---------------------------------------------------------------------------
# whole-bag regional attention


@dataclass
class RegionAttnCache:
    geom: RegionGeometry
    region_caches: list
    region_out: np.ndarray  # (L*L, M*M, D), includes pad-cell outputs
    key_masks: list


def region_attention(h, params: RegionAttnParams, regions_per_side: int, mask_padding=False):
    """Square, partition, attend per region with shared weights, flatten back.

    Returns (out, cache); out is (I, D). cache.region_out keeps the attention
    output at padding cells as well, which the enclosing block may need when
    padding is carried into the next sublayer.
    """
    h = np.asarray(h, dtype=np.float64)
    geom = region_geometry(h.shape[0], regions_per_side)
    regions = regionize(h, geom)
    pad_flags = region_flat_indices(geom) >= geom.i_valid

    outs = np.empty_like(regions)
    caches = []
    masks = []
    for r in range(geom.n_regions):
        mask = pad_flags[r] if (mask_padding and pad_flags[r].any()) else None
        y, c = mha_forward(regions[r], params.attn, params, mask)
        outs[r] = y
        caches.append(c)
        masks.append(mask)
    out = unregionize(outs, geom)
    return out, RegionAttnCache(geom, caches, outs, masks)


def region_attention_backward(grad_out, cache: RegionAttnCache, params: RegionAttnParams, extra_region_grad=None):
    """grad_out: (I, D). ``extra_region_grad`` optionally adds gradient arriving
    at the region-resolved output (pad cells included). Returns grad wrt h."""
    geom = cache.geom
    grad_regions = regionize(grad_out, geom)
    if extra_region_grad is not None:
        grad_regions = grad_regions + extra_region_grad
    grad_in = np.empty_like(grad_regions)
    for r in range(geom.n_regions):
        grad_in[r] = mha_backward(grad_regions[r], cache.region_caches[r], params.attn, params)
    return unregionize(grad_in, geom)
