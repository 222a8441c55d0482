"""Gradient-check suites over every differentiable operation family.

Each check builds a small random instance of one op, computes analytic
gradients with the hand-written backward, and compares every coordinate
against central finite differences through a weighted-sum scalar readout
(random fixed weights - a plain sum would send zero gradient through any
normalization and prove nothing).

Routing matrices and positional kernels are drawn away from zero here: the
min-max gate is non-differentiable exactly at the all-equal-logits point, so
checking there would compare a subgradient convention against a kink.
"""

from __future__ import annotations

from itertools import product

import numpy as np

from .cross_region import CrossRegionParams, cross_region_mix, cross_region_mix_backward
from .milhead import bag_loss, head_backward, head_forward, init_milhead_params
from .model import Model, ModelSettings
from .numerics import (
    GradCheckReport,
    ParamTensor,
    conv1d_depthwise,
    conv1d_depthwise_backward,
    finite_diff_check,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    softmax,
    softmax_backward,
)
from .reembed import BlockSettings, block_backward, block_forward, init_block_params
from .region import region_geometry
from .region_attn import AttentionParams, RegionAttnParams, region_attention, region_attention_backward


def _w(rng, shape):
    return rng.normal(size=shape)


def check_linear(seed, inject_bug=False):
    rng = np.random.default_rng(seed)
    x = ParamTensor("x", _w(rng, (4, 5)))
    w = ParamTensor("w", _w(rng, (5, 3)))
    b = ParamTensor("b", _w(rng, 3))
    wt = _w(rng, (4, 3))
    gx, gw, gb = linear_backward(wt, x.values, w.values)
    if inject_bug:
        gw = 2.0 * gw
    x.grad, w.grad, b.grad = gx, gw, wt.sum(axis=0)

    def loss():
        return float((linear(x.values, w.values, b.values) * wt).sum())

    return finite_diff_check(f"linear[seed={seed}]", loss, [x, w, b])


def check_softmax(seed):
    rng = np.random.default_rng(seed)
    x = ParamTensor("x", _w(rng, (3, 5)))
    wt = _w(rng, (3, 5))
    y = softmax(x.values, axis=-1)
    x.grad = softmax_backward(wt, y, axis=-1)

    def loss():
        return float((softmax(x.values, axis=-1) * wt).sum())

    return finite_diff_check(f"softmax[seed={seed}]", loss, [x])


def check_layer_norm(seed):
    rng = np.random.default_rng(seed)
    x = ParamTensor("x", _w(rng, (4, 6)))
    scale = ParamTensor("scale", 1.0 + 0.1 * _w(rng, 6))
    shift = ParamTensor("shift", 0.1 * _w(rng, 6))
    wt = _w(rng, (4, 6))
    gx, gs, gb = layer_norm_backward(wt, x.values, scale.values)
    x.grad, scale.grad, shift.grad = gx, gs, gb

    def loss():
        return float((layer_norm(x.values, scale.values, shift.values) * wt).sum())

    return finite_diff_check(f"layer_norm[seed={seed}]", loss, [x, scale, shift])


def check_conv1d(seed):
    rng = np.random.default_rng(seed)
    x = ParamTensor("x", _w(rng, (3, 9)))
    k = ParamTensor("k", _w(rng, (3, 5)))
    wt = _w(rng, (3, 9))
    gx, gk = conv1d_depthwise_backward(wt, x.values, k.values)
    x.grad, k.grad = gx, gk

    def loss():
        return float((conv1d_depthwise(x.values, k.values) * wt).sum())

    return finite_diff_check(f"conv1d_depthwise[seed={seed}]", loss, [x, k])


def check_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    logits = ParamTensor("logits", _w(rng, 3))
    _, grad = bag_loss(logits.values, 1)
    logits.grad = grad

    def loss():
        return bag_loss(logits.values, 1)[0]

    return finite_diff_check(f"cross_entropy[seed={seed}]", loss, [logits])


def _region_attn_params(rng, d, n_head, pos_conv_k, variant, scale_full_d=False):
    def mat(name):
        return ParamTensor(name, rng.normal(scale=0.4, size=(d, d)))

    attn = AttentionParams(
        mat("wq"), mat("wk"), mat("wv"), mat("wo"),
        n_head=n_head, scale_full_d=scale_full_d,
    )
    kern = ParamTensor("pos_conv", rng.normal(scale=0.3, size=(n_head, pos_conv_k)))
    return RegionAttnParams(attn, kern, use_pos_conv=True, pos_conv_variant=variant)


def check_region_attn(seed, i, d, l, variant="attn", mask_padding=False):
    rng = np.random.default_rng(seed)
    params = _region_attn_params(rng, d, n_head=2, pos_conv_k=3, variant=variant)
    h = ParamTensor("h", _w(rng, (i, d)))
    tensors = params.tensors() + [h]

    def forward():
        return region_attention(h.values, params, l, mask_padding)[0]

    wt = _w(rng, (i, d))
    out, cache = region_attention(h.values, params, l, mask_padding)
    for t in tensors:
        t.zero_grad()
    h.grad = region_attention_backward(wt, cache, params)

    def loss():
        return float((forward() * wt).sum())

    name = f"region_attention_{variant}[i={i},d={d},l={l}]"
    return finite_diff_check(name, loss, tensors)


def check_cross_region(seed, i, d, l, attn_axis="region"):
    rng = np.random.default_rng(seed)
    geom = region_geometry(i, l)

    def mat(name):
        return ParamTensor(name, rng.normal(scale=0.4, size=(d, d)))

    params = CrossRegionParams(
        phi=ParamTensor("phi", rng.normal(scale=0.5, size=(d, 3))),
        inner=AttentionParams(mat("wq"), mat("wk"), mat("wv"), mat("wo"), n_head=2),
        attn_axis=attn_axis,
    )
    zhat = ParamTensor("zhat", _w(rng, (geom.n_regions, geom.cells_per_region, d)))
    tensors = params.tensors() + [zhat]
    wt = _w(rng, zhat.values.shape)

    out, cache = cross_region_mix(zhat.values, params)
    for t in tensors:
        t.zero_grad()
    zhat.grad = cross_region_mix_backward(wt, cache, params)

    def loss():
        return float((cross_region_mix(zhat.values, params)[0] * wt).sum())

    name = f"cross_region_mix_{attn_axis}[r={geom.n_regions},p={geom.cells_per_region},d={d}]"
    return finite_diff_check(name, loss, tensors)


def _randomize_block(params, rng):
    # init leaves the positional kernels and the routing matrix at zero;
    # move them off the kink before checking
    params.region_attn.pos_conv_kernels.values[...] = rng.normal(
        scale=0.3, size=params.region_attn.pos_conv_kernels.values.shape
    )
    if params.cross_region is not None:
        params.cross_region.phi.values[...] = rng.normal(
            scale=0.5, size=params.cross_region.phi.values.shape
        )


def check_block(seed, i, d, l, use_cross_region=True, use_ffn=False, rezero_pad=True,
                mask_padding=False, variant="attn"):
    rng = np.random.default_rng(seed)
    s = BlockSettings(
        d=d, regions_per_side=l, n_head=2, pos_conv_k=3, slots=2,
        use_cross_region=use_cross_region, use_ffn=use_ffn, pos_conv_variant=variant,
        mask_padding=mask_padding, rezero_pad=rezero_pad, ffn_mult=2,
    )
    params = init_block_params("blk", s, rng)
    _randomize_block(params, rng)
    h = ParamTensor("h", _w(rng, (i, d)))
    tensors = params.tensors() + [h]
    wt = _w(rng, (i, d))

    out, cache = block_forward(h.values, params, s)
    for t in tensors:
        t.zero_grad()
    h.grad = block_backward(wt, cache, params, s)

    def loss():
        return float((block_forward(h.values, params, s)[0] * wt).sum())

    flags = f"cross_region={int(use_cross_region)},ffn={int(use_ffn)},rz={int(rezero_pad)}"
    return finite_diff_check(f"block[i={i},d={d},l={l},{flags}]", loss, tensors)


def check_head(seed, i, d, gated=True):
    rng = np.random.default_rng(seed)
    params = init_milhead_params("head", d, 16, 2, rng, gated=gated)
    z = ParamTensor("z", _w(rng, (i, d)))
    tensors = params.tensors() + [z]
    label = 1

    pred, cache = head_forward(z.values, params)
    _, grad_logits = bag_loss(pred.logits, label)
    for t in tensors:
        t.zero_grad()
    z.grad = head_backward(grad_logits, cache, params)

    def loss():
        p, _ = head_forward(z.values, params)
        return bag_loss(p.logits, label)[0]

    kind = "gated" if gated else "plain"
    return finite_diff_check(f"mil_head_{kind}[i={i},d={d}]", loss, tensors)


def check_model(seed, i, d_in, d, l):
    rng = np.random.default_rng(seed)
    s = ModelSettings(
        d_in=d_in, d=d, mil_hidden=8, n_blocks=1,
        block=BlockSettings(d=d, regions_per_side=l, n_head=2, pos_conv_k=3, slots=2),
    )
    model = Model(s, seed)
    for b in model.blocks:
        _randomize_block(b, rng)
    x = ParamTensor("x", _w(rng, (i, d_in)))
    tensors = model.parameters() + [x]
    label = 0

    model.zero_grad()
    x.zero_grad()
    pred, cache = model.forward(x.values)
    _, grad_logits = bag_loss(pred.logits, label)
    x.grad = model.backward(grad_logits, cache)

    def loss():
        p, _ = model.forward(x.values)
        return bag_loss(p.logits, label)[0]

    return finite_diff_check(f"model[i={i},d={d},l={l}]", loss, tensors)


def run_gradcheck(
    seed=0,
    i_vals=(5, 17),
    d_vals=(8,),
    l_vals=(2,),
    n_prim_seeds=5,
    include_model=True,
    inject_bug=False,
) -> list:
    """Returns one GradCheckReport per (op family, configuration)."""
    reports = []
    for s in range(n_prim_seeds):
        reports.append(check_linear(seed + s, inject_bug=inject_bug and s == 0))
        reports.append(check_softmax(seed + s))
        reports.append(check_layer_norm(seed + s))
        reports.append(check_conv1d(seed + s))
        reports.append(check_cross_entropy(seed + s))

    combos = list(product(i_vals, d_vals, l_vals))
    for idx, (i, d, l) in enumerate(combos):
        s = seed + 100 + idx
        variant = "attn" if idx % 2 == 0 else "value"
        mask = idx % 3 == 0
        reports.append(check_region_attn(s, i, d, l, variant=variant, mask_padding=mask))
        axis = "region" if idx % 2 == 0 else "slot"
        reports.append(check_cross_region(s, i, d, l, attn_axis=axis))
        reports.append(
            check_block(
                s, i, d, l,
                use_cross_region=True,
                use_ffn=idx % 4 == 1,
                rezero_pad=idx % 2 == 0,
                mask_padding=mask,
                variant=variant,
            )
        )
    for idx, (i, d) in enumerate(product(i_vals, d_vals)):
        reports.append(check_head(seed + 200 + idx, i, d, gated=idx % 2 == 0))
    if include_model:
        reports.append(check_model(seed + 300, i_vals[0], 6, d_vals[0], l_vals[0]))
        reports.append(check_model(seed + 301, i_vals[-1], 6, d_vals[0], l_vals[-1]))
    return reports
