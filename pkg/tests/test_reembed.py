import numpy as np
import pytest

from remil.checks import check_block
from remil.reembed import (
    BlockSettings,
    block_backward,
    block_forward,
    init_block_params,
    init_stack,
    stack_backward,
    stack_forward,
)


def _settings(**kw):
    base = dict(d=8, regions_per_side=2, n_head=2, pos_conv_k=3, slots=2)
    base.update(kw)
    return BlockSettings(**base)


def test_fresh_block_is_identity_plus_regional_attention():
    # at init the positional kernels and routing matrix are zero, so the only
    # active branch is regional attention; the cross-region residual is exact
    rng = np.random.default_rng(0)
    s = _settings()
    params = init_block_params("b", s, rng)
    h = rng.normal(size=(11, 8))
    out, cache = block_forward(h, params, s)
    np.testing.assert_array_equal(out, cache.zhat)  # cr branch contributed 0


def test_cross_region_disabled_matches_zero_phi():
    rng = np.random.default_rng(1)
    s_on = _settings(use_cross_region=True)
    s_off = _settings(use_cross_region=False)
    p_on = init_block_params("b", s_on, rng)
    p_off = init_block_params("b", s_off, np.random.default_rng(1))
    h = np.random.default_rng(2).normal(size=(13, 8))
    out_on, _ = block_forward(h, p_on, s_on)
    out_off, _ = block_forward(h, p_off, s_off)
    # phi starts at zero, so enabling the stage changes nothing numerically
    np.testing.assert_allclose(out_on, out_off, atol=1e-12)


def test_residual_identity_when_attention_output_is_zero():
    rng = np.random.default_rng(3)
    s = _settings(use_cross_region=False)
    params = init_block_params("b", s, rng)
    for t in params.region_attn.attn.tensors():
        if t.name.endswith("wo"):
            t.values[...] = 0.0  # kill the attention write-back
    h = rng.normal(size=(9, 8))
    out, _ = block_forward(h, params, s)
    np.testing.assert_array_equal(out, h)


def test_ffn_branch_toggles():
    rng = np.random.default_rng(4)
    s = _settings(use_ffn=True, ffn_mult=2)
    params = init_block_params("b", s, rng)
    h = rng.normal(size=(7, 8))
    out_ffn, _ = block_forward(h, params, s)
    s2 = _settings(use_ffn=False)
    params2 = init_block_params("b", s2, np.random.default_rng(4))
    out_plain, _ = block_forward(h, params2, s2)
    assert not np.allclose(out_ffn, out_plain)


def test_rezero_pad_changes_output_only_via_cross_region():
    rng = np.random.default_rng(5)
    kw = dict(mask_padding=False)
    s_rz = _settings(rezero_pad=True, **kw)
    s_carry = _settings(rezero_pad=False, **kw)
    params = init_block_params("b", s_rz, rng)
    params.cross_region.phi.values[...] = rng.normal(scale=0.5, size=params.cross_region.phi.values.shape)
    h = rng.normal(size=(5, 8))  # side 4: heavy padding
    out_rz, _ = block_forward(h, params, s_rz)
    out_carry, _ = block_forward(h, params, s_carry)
    assert not np.allclose(out_rz, out_carry)


def test_rezero_pad_irrelevant_without_padding():
    rng = np.random.default_rng(6)
    s_rz = _settings(rezero_pad=True)
    s_carry = _settings(rezero_pad=False)
    params = init_block_params("b", s_rz, rng)
    params.cross_region.phi.values[...] = rng.normal(scale=0.5, size=params.cross_region.phi.values.shape)
    h = rng.normal(size=(16, 8))  # 4x4 grid exactly, no pads
    out_rz, _ = block_forward(h, params, s_rz)
    out_carry, _ = block_forward(h, params, s_carry)
    np.testing.assert_array_equal(out_rz, out_carry)


@pytest.mark.parametrize(
    "kw",
    [
        dict(),
        dict(use_ffn=True),
        dict(rezero_pad=False),
        dict(mask_padding=True),
        dict(use_cross_region=False),
        dict(pos_conv_variant="value"),
        dict(cross_attn_axis="slot"),
    ],
)
def test_gradcheck_flag_matrix(kw):
    r = check_block(
        11,
        14,
        8,
        2,
        use_cross_region=kw.get("use_cross_region", True),
        use_ffn=kw.get("use_ffn", False),
        rezero_pad=kw.get("rezero_pad", True),
        mask_padding=kw.get("mask_padding", False),
        variant=kw.get("pos_conv_variant", "attn"),
    )
    assert r.passed, str(r)


def test_stack_composes_blocks():
    rng = np.random.default_rng(7)
    s = _settings()
    blocks = init_stack("blk", s, 2, rng)
    assert len(blocks) == 2
    names = {t.name for b in blocks for t in b.tensors()}
    assert any(n.startswith("blk0.") for n in names)
    assert any(n.startswith("blk1.") for n in names)
    h = rng.normal(size=(10, 8))
    out, caches = stack_forward(h, blocks, s)
    assert out.shape == h.shape
    assert len(caches) == 2
    manual = h
    for b, c in zip(blocks, caches):
        manual, _ = block_forward(manual, b, s)
    np.testing.assert_allclose(out, manual, atol=1e-12)


def test_empty_stack_is_identity():
    rng = np.random.default_rng(8)
    s = _settings()
    blocks = init_stack("blk", s, 0, rng)
    h = rng.normal(size=(6, 8))
    out, caches = stack_forward(h, blocks, s)
    np.testing.assert_array_equal(out, h)
    grad = stack_backward(np.ones_like(h), caches, blocks, s)
    np.testing.assert_array_equal(grad, np.ones_like(h))


def test_settings_validation():
    with pytest.raises(ValueError):
        _settings(d=9).validate()  # not divisible by heads
    with pytest.raises(ValueError):
        _settings(pos_conv_k=4).validate()
    with pytest.raises(ValueError):
        _settings(pos_conv_variant="bogus").validate()
