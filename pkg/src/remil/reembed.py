"""The re-embedding block: regional attention plus cross-region mixing.

Each block applies two pre-norm residual sublayers to an (I, D) bag:

    zhat = h + regional_attention(norm1(h))
    z    = zhat + cross_region(norm2(zhat))      (optional)
    z    = z + ffn(norm3(z))                     (optional, default off)

The cross-region sublayer consumes the regioned view of norm2(zhat). Grid
cells past the bag's I instances are zeroed again before pooling by default,
so the routing softmax never ingests attention residue that accumulated at
padded cells; ``rezero_pad=False`` instead carries the first sublayer's
output at those cells through norm2 into the pooling, for comparison.

Blocks stack: each owns its parameters, output feeds the next block's input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cross_region import ATTN_AXES, CrossRegionParams, cross_region_mix, cross_region_mix_backward, init_cross_region_params
from .numerics import ParamTensor, layer_norm, layer_norm_backward, linear, linear_backward
from .region import region_flat_indices, region_geometry, regionize, unregionize
from .region_attn import POS_CONV_VARIANTS, RegionAttnParams, init_region_attn_params, region_attention, region_attention_backward


@dataclass
class BlockSettings:
    d: int = 512
    regions_per_side: int = 8
    n_head: int = 8
    pos_conv_k: int = 15
    slots: int = 3
    use_pos_conv: bool = True
    use_cross_region: bool = True
    use_ffn: bool = False
    pos_conv_variant: str = "attn"
    mask_padding: bool = False
    rezero_pad: bool = True
    scale_full_d: bool = False
    cross_attn_axis: str = "region"
    ffn_mult: int = 4
    eps: float = 1e-5

    def validate(self):
        if self.d % self.n_head != 0:
            raise ValueError(f"width {self.d} not divisible by {self.n_head} heads")
        if self.pos_conv_k % 2 != 1:
            raise ValueError(f"positional kernel length {self.pos_conv_k} must be odd")
        if self.regions_per_side < 1:
            raise ValueError("regions_per_side must be >= 1")
        if self.slots < 1:
            raise ValueError("slots must be >= 1")
        if self.pos_conv_variant not in POS_CONV_VARIANTS:
            raise ValueError(f"unknown positional-kernel variant {self.pos_conv_variant!r}")
        if self.cross_attn_axis not in ATTN_AXES:
            raise ValueError(f"unknown attention axis {self.cross_attn_axis!r}")
        return self


@dataclass
class FFNParams:
    w1: ParamTensor
    b1: ParamTensor
    w2: ParamTensor
    b2: ParamTensor

    def tensors(self):
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class BlockParams:
    ln1_scale: ParamTensor
    ln1_shift: ParamTensor
    region_attn: RegionAttnParams
    ln2_scale: ParamTensor | None = None
    ln2_shift: ParamTensor | None = None
    cross_region: CrossRegionParams | None = None
    ln3_scale: ParamTensor | None = None
    ln3_shift: ParamTensor | None = None
    ffn: FFNParams | None = None

    def tensors(self):
        out = [self.ln1_scale, self.ln1_shift] + self.region_attn.tensors()
        if self.cross_region is not None:
            out += [self.ln2_scale, self.ln2_shift] + self.cross_region.tensors()
        if self.ffn is not None:
            out += [self.ln3_scale, self.ln3_shift] + self.ffn.tensors()
        return out


def init_block_params(prefix: str, s: BlockSettings, rng: np.random.Generator) -> BlockParams:
    s.validate()
    d = s.d

    def ln(name):
        return (
            ParamTensor(f"{prefix}.{name}.scale", np.ones(d)),
            ParamTensor(f"{prefix}.{name}.shift", np.zeros(d)),
        )

    ln1_scale, ln1_shift = ln("ln1")
    params = BlockParams(
        ln1_scale=ln1_scale,
        ln1_shift=ln1_shift,
        region_attn=init_region_attn_params(
            f"{prefix}.region_attn",
            d,
            s.n_head,
            s.pos_conv_k,
            rng,
            use_pos_conv=s.use_pos_conv,
            pos_conv_variant=s.pos_conv_variant,
            scale_full_d=s.scale_full_d,
        ),
    )
    if s.use_cross_region:
        params.ln2_scale, params.ln2_shift = ln("ln2")
        params.cross_region = init_cross_region_params(
            f"{prefix}.cross_region", d, s.slots, s.n_head, rng,
            attn_axis=s.cross_attn_axis, scale_full_d=s.scale_full_d,
        )
    if s.use_ffn:
        params.ln3_scale, params.ln3_shift = ln("ln3")
        dff = s.ffn_mult * d
        b1 = 1.0 / np.sqrt(d)
        b2 = 1.0 / np.sqrt(dff)
        params.ffn = FFNParams(
            w1=ParamTensor(f"{prefix}.ffn.w1", rng.uniform(-b1, b1, size=(d, dff))),
            b1=ParamTensor(f"{prefix}.ffn.b1", np.zeros(dff)),
            w2=ParamTensor(f"{prefix}.ffn.w2", rng.uniform(-b2, b2, size=(dff, d))),
            b2=ParamTensor(f"{prefix}.ffn.b2", np.zeros(d)),
        )
    return params


@dataclass
class BlockCache:
    h: np.ndarray
    geom: object
    attn_cache: object
    zhat: np.ndarray
    pad_cells: np.ndarray | None = None  # boolean (R, P) where the grid is padding
    pad_rows: np.ndarray | None = None  # first-sublayer output at pad cells (carry path)
    cr_cache: object = None
    cr_in_valid: np.ndarray = None  # zhat again, kept for norm2 backward clarity
    ffn_in: np.ndarray = None
    ffn_norm: np.ndarray = None
    ffn_pre: np.ndarray = None
    ffn_act: np.ndarray = None


def block_forward(h, params: BlockParams, s: BlockSettings):
    h = np.asarray(h, dtype=np.float64)
    geom = region_geometry(h.shape[0], s.regions_per_side)
    cache = BlockCache(h=h, geom=geom, attn_cache=None, zhat=None)

    u = layer_norm(h, params.ln1_scale.values, params.ln1_shift.values, s.eps)
    att, cache.attn_cache = region_attention(u, params.region_attn, s.regions_per_side, s.mask_padding)
    zhat = h + att
    cache.zhat = zhat
    z = zhat

    if params.cross_region is not None:
        v = layer_norm(zhat, params.ln2_scale.values, params.ln2_shift.values, s.eps)
        vreg = regionize(v, geom)
        if not s.rezero_pad and geom.pad_count:
            pad_cells = region_flat_indices(geom) >= geom.i_valid
            pad_rows = cache.attn_cache.region_out[pad_cells]
            vreg[pad_cells] = layer_norm(
                pad_rows, params.ln2_scale.values, params.ln2_shift.values, s.eps
            )
            cache.pad_cells = pad_cells
            cache.pad_rows = pad_rows
        cr_reg, cache.cr_cache = cross_region_mix(vreg, params.cross_region)
        z = zhat + unregionize(cr_reg, geom)

    if params.ffn is not None:
        cache.ffn_in = z
        w = layer_norm(z, params.ln3_scale.values, params.ln3_shift.values, s.eps)
        pre = linear(w, params.ffn.w1.values, params.ffn.b1.values)
        act = np.maximum(pre, 0.0)
        z = z + linear(act, params.ffn.w2.values, params.ffn.b2.values)
        cache.ffn_norm = w
        cache.ffn_pre = pre
        cache.ffn_act = act
    return z, cache


def block_backward(grad_z, cache: BlockCache, params: BlockParams, s: BlockSettings):
    grad = np.asarray(grad_z, dtype=np.float64)
    geom = cache.geom

    if params.ffn is not None:
        gact, gw2, gb2 = linear_backward(grad, cache.ffn_act, params.ffn.w2.values)
        params.ffn.w2.grad += gw2
        params.ffn.b2.grad += gb2
        gpre = gact * (cache.ffn_pre > 0.0)
        gnorm, gw1, gb1 = linear_backward(gpre, cache.ffn_norm, params.ffn.w1.values)
        params.ffn.w1.grad += gw1
        params.ffn.b1.grad += gb1
        gx, gs, gb = layer_norm_backward(gnorm, cache.ffn_in, params.ln3_scale.values, s.eps)
        params.ln3_scale.grad += gs
        params.ln3_shift.grad += gb
        grad = grad + gx

    extra_region_grad = None
    if params.cross_region is not None:
        g_cr_reg = regionize(grad, geom)
        g_vreg = cross_region_mix_backward(g_cr_reg, cache.cr_cache, params.cross_region)
        if cache.pad_cells is not None:
            g_pad_norm = g_vreg[cache.pad_cells]
            gxp, gs, gb = layer_norm_backward(
                g_pad_norm, cache.pad_rows, params.ln2_scale.values, s.eps
            )
            params.ln2_scale.grad += gs
            params.ln2_shift.grad += gb
            extra_region_grad = np.zeros_like(g_vreg)
            extra_region_grad[cache.pad_cells] = gxp
        g_v = unregionize(g_vreg, geom)
        gx, gs, gb = layer_norm_backward(g_v, cache.zhat, params.ln2_scale.values, s.eps)
        params.ln2_scale.grad += gs
        params.ln2_shift.grad += gb
        grad = grad + gx

    g_att = region_attention_backward(grad, cache.attn_cache, params.region_attn, extra_region_grad)
    gx1, gs1, gb1 = layer_norm_backward(g_att, cache.h, params.ln1_scale.values, s.eps)
    params.ln1_scale.grad += gs1
    params.ln1_shift.grad += gb1
    return grad + gx1


def init_stack(prefix: str, s: BlockSettings, n_blocks: int, rng: np.random.Generator):
    if n_blocks < 0:
        raise ValueError("n_blocks must be >= 0")
    return [init_block_params(f"{prefix}{i}", s, rng) for i in range(n_blocks)]


def stack_forward(h, blocks, s: BlockSettings):
    caches = []
    z = h
    for p in blocks:
        z, c = block_forward(z, p, s)
        caches.append(c)
    return z, caches


def stack_backward(grad_z, caches, blocks, s: BlockSettings):
    grad = grad_z
    for p, c in zip(reversed(blocks), reversed(caches)):
        grad = block_backward(grad, c, p, s)
    return grad
