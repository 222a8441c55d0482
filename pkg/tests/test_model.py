import numpy as np
import pytest

from remil.milhead import head_forward
from remil.model import (
    Model,
    ModelSettings,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from remil.numerics import linear
from remil.reembed import BlockSettings


def _settings(d_in=6, d=8, n_blocks=1, **kw):
    block = BlockSettings(d=d, regions_per_side=2, n_head=2, pos_conv_k=3, slots=2)
    return ModelSettings(d_in=d_in, d=d, mil_hidden=8, n_blocks=n_blocks, block=block, **kw)


def test_same_seed_same_init():
    a = Model(_settings(), seed=4)
    b = Model(_settings(), seed=4)
    for ta, tb in zip(a.parameters(), b.parameters()):
        assert ta.name == tb.name
        np.testing.assert_array_equal(ta.values, tb.values)
    c = Model(_settings(), seed=5)
    assert not np.array_equal(a.proj_w.values, c.proj_w.values)


def test_parameter_names_cover_all_stages():
    names = {t.name for t in Model(_settings(n_blocks=2), seed=0).parameters()}
    assert "proj.w" in names and "proj.b" in names
    assert any(n.startswith("block0.") for n in names)
    assert any(n.startswith("block1.") for n in names)
    assert any(n.startswith("head.") for n in names)


def test_zero_blocks_is_plain_attention_pooling():
    model = Model(_settings(n_blocks=0), seed=1)
    assert not any(t.name.startswith("block") for t in model.parameters())
    x = np.random.default_rng(2).normal(size=(11, 6))
    pred, _ = model.forward(x)
    h = linear(x, model.proj_w.values, model.proj_b.values)
    direct, _ = head_forward(h, model.head)
    np.testing.assert_array_equal(pred.logits, direct.logits)


def test_reembedding_makes_output_order_dependent():
    model = Model(_settings(), seed=3)
    x = np.random.default_rng(4).normal(size=(10, 6))
    base, _ = model.forward(x)
    flipped, _ = model.forward(x[::-1])
    assert not np.allclose(base.logits, flipped.logits)


def test_zero_blocks_is_order_invariant():
    # invariant up to projection rounding: the input matmul is batched BLAS,
    # so permuted rows can differ in the last bits before they reach the head
    model = Model(_settings(n_blocks=0), seed=3)
    x = np.random.default_rng(5).normal(size=(10, 6))
    base, _ = model.forward(x)
    flipped, _ = model.forward(x[::-1])
    np.testing.assert_allclose(np.sort(base.attention), np.sort(flipped.attention), rtol=1e-9)
    np.testing.assert_allclose(base.logits, flipped.logits, rtol=1e-9, atol=1e-12)


def test_loss_on_bag_accumulates_gradients():
    model = Model(_settings(), seed=6)
    x = np.random.default_rng(7).normal(size=(5, 6))
    model.zero_grad()
    loss1, _ = model.loss_on_bag(x, 1)
    once = model.proj_w.grad.copy()
    loss2, _ = model.loss_on_bag(x, 1)
    assert loss2 == loss1
    np.testing.assert_allclose(model.proj_w.grad, 2.0 * once, rtol=1e-12)
    model.zero_grad()
    assert not model.proj_w.grad.any()


def test_settings_validation():
    with pytest.raises(ValueError):
        ModelSettings(d_in=0, d=8, block=BlockSettings(d=8, n_head=2, pos_conv_k=3)).validate()
    with pytest.raises(ValueError):
        ModelSettings(d_in=4, d=8, n_blocks=-1, block=BlockSettings(d=8, n_head=2, pos_conv_k=3)).validate()
    with pytest.raises(ValueError):
        ModelSettings(d_in=4, d=8, block=BlockSettings(d=16, n_head=2, pos_conv_k=3)).validate()


def test_zero_blocks_skip_block_config_checks():
    # d=9 would fail the head-divisibility check, but no blocks exist to use it
    s = ModelSettings(d_in=4, d=9, n_blocks=0, block=BlockSettings(d=9))
    s.validate()
    Model(s, seed=0)


def test_checkpoint_round_trip_exact(tmp_path):
    model = Model(_settings(), seed=8)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, model.get_values())
    loaded = read_checkpoint(path)
    values = model.get_values()
    assert set(loaded) == set(values)
    for name in values:
        np.testing.assert_array_equal(loaded[name], values[name])


def test_checkpoint_rewrite_is_byte_identical(tmp_path):
    model = Model(_settings(), seed=9)
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(p1, model.get_values())
    save_checkpoint(p2, model.get_values())
    assert p1.read_bytes() == p2.read_bytes()


def test_load_checkpoint_restores_predictions(tmp_path):
    src = Model(_settings(), seed=10)
    x = np.random.default_rng(11).normal(size=(9, 6))
    want, _ = src.forward(x)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, src.get_values())
    dst = Model(_settings(), seed=99)
    load_checkpoint(path, dst)
    got, _ = dst.forward(x)
    np.testing.assert_array_equal(want.logits, got.logits)


def test_read_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x01")
    with pytest.raises(ValueError, match="magic"):
        read_checkpoint(path)


def test_read_checkpoint_rejects_bad_version(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"RMLC" + b"\x07")
    with pytest.raises(ValueError, match="version"):
        read_checkpoint(path)


def test_read_checkpoint_names_truncated_tensor(tmp_path):
    model = Model(_settings(), seed=12)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, model.get_values())
    clipped = tmp_path / "clip.bin"
    clipped.write_bytes(path.read_bytes()[:-9])
    with pytest.raises(ValueError, match="truncated"):
        read_checkpoint(clipped)


def test_set_values_errors_name_the_tensor(tmp_path):
    model = Model(_settings(), seed=13)
    values = model.get_values()
    short = dict(values)
    del short["head.w"]
    with pytest.raises(ValueError, match="head.w"):
        model.set_values(short)
    wrong = dict(values)
    wrong["proj.b"] = np.zeros(3)
    with pytest.raises(ValueError, match="proj.b"):
        model.set_values(wrong)
