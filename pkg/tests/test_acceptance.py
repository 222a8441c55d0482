"""Acceptance gate: every criterion runs at its stated tolerance and prints
one visible pass/fail line. Heavy fixtures (datasets, CV runs) are module
scoped so later criteria can reuse them."""

import os
import time

import numpy as np
import pytest

from remil.bagio import SynthConfig, kfold_split, load_bags, load_manifest, synthesize_dataset
from remil.checks import run_gradcheck
from remil.config import RunConfig, model_settings, train_config
from remil.cross_region import cr_weights, init_cross_region_params
from remil.milhead import head_forward, init_milhead_params
from remil.model import Model
from remil.oracles import (
    run_auc_suite,
    run_cross_region_suite,
    run_region_attention_suite,
    run_threshold_suite,
)
from remil.reembed import BlockSettings, block_forward, init_block_params
from remil.region import region_geometry, regionize, unregionize
from remil.region_attn import init_region_attn_params, region_attention
from remil.train import cross_validate, history_to_csv


def _report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {n}: {detail}"


# ---------------------------------------------------------------------------
# criterion 1: gradient suite


def test_criterion_1_gradients(capsys):
    t0 = time.time()
    reports = run_gradcheck(seed=0, i_vals=(1, 5, 17, 64), d_vals=(8, 16), l_vals=(1, 2, 4))
    wall = time.time() - t0
    worst = max(r.max_rel_err for r in reports)
    ok = all(r.passed for r in reports) and worst < 1e-4 and wall < 300
    _report(
        capsys, 1, ok,
        f"{len(reports)} checks, max rel err {worst:.2e} (tol 1e-4), {wall:.0f}s (budget 300s)",
    )


# ---------------------------------------------------------------------------
# criterion 2: attention oracles


def test_criterion_2_attention_oracles(capsys):
    t0 = time.time()
    region_attn = run_region_attention_suite(n_configs=50, seed=0, tol=1e-10)
    cross_region = run_cross_region_suite(n_configs=50, seed=1, tol=1e-10)
    wall = time.time() - t0
    dev = max(region_attn.max_abs_dev, cross_region.max_abs_dev)
    ok = region_attn.passed and cross_region.passed and wall < 120
    _report(
        capsys, 2, ok,
        f"50+50 configs, max dev {dev:.2e} (tol 1e-10), {wall:.1f}s (budget 120s)",
    )


# ---------------------------------------------------------------------------
# criterion 3: structural invariants


def test_criterion_3_structural_invariants(capsys):
    rng = np.random.default_rng(0)

    # region round-trip, every I in [1,500] x every L in [1,8], exact
    trips = 0
    for l in range(1, 9):
        for i in range(1, 501):
            h = rng.normal(size=(i, 3))
            geom = region_geometry(i, l)
            if not np.array_equal(unregionize(regionize(h, geom), geom), h):
                _report(capsys, 3, False, f"round-trip broke at I={i}, L={l}")
            trips += 1

    # softmax / combine / dispatch normalizations to 1e-12
    norm_dev = 0.0
    for _ in range(10):
        d, nh, l, i = 8, 2, 2, int(rng.integers(4, 40))
        params = init_region_attn_params("a", d, nh, 5, rng)
        params.pos_conv_kernels.values[...] = rng.normal(size=params.pos_conv_kernels.values.shape)
        _, cache = region_attention(rng.normal(size=(i, d)), params, l)
        for rc in cache.region_caches:
            norm_dev = max(norm_dev, float(np.abs(rc.alpha.sum(axis=-1) - 1.0).max()))
        cr = init_cross_region_params("c", d, 3, nh, rng)
        cr.phi.values[...] = rng.normal(size=cr.phi.values.shape)
        geom = region_geometry(i, l)
        zhat = rng.normal(size=(geom.n_regions, geom.cells_per_region, d))
        w, _ = cr_weights(zhat, cr.phi.values)
        norm_dev = max(norm_dev, float(np.abs(w.combine.sum(axis=-1) - 1.0).max()))
        norm_dev = max(norm_dev, float(np.abs(w.dispatch_soft.sum(axis=1) - 1.0).max()))
    norms_ok = norm_dev < 1e-12

    # residual identity at zero-initialized branches, exact
    settings = BlockSettings(d=8, regions_per_side=2, n_head=2, pos_conv_k=3, slots=2)
    params = init_block_params("b", settings, np.random.default_rng(5))
    h = rng.normal(size=(13, 8))
    out, cache = block_forward(h, params, settings)
    residual_ok = np.array_equal(out, cache.zhat)  # fresh CR branch adds exact zero

    # MIL head exactly permutation invariant; full model order-dependent
    head = init_milhead_params("h", 8, 16, 2, np.random.default_rng(6))
    z = rng.normal(size=(23, 8))
    base, _ = head_forward(z, head)
    perm_ok = True
    for _ in range(5):
        p = rng.permutation(23)
        got, _ = head_forward(z[p], head)
        perm_ok = perm_ok and np.array_equal(base.logits, got.logits)
        perm_ok = perm_ok and np.array_equal(base.attention[p], got.attention)
    cfg = RunConfig(D=8, N_head=2, pos_conv_k=3, K=2, L=2, mil_hidden=8)
    model = Model(model_settings(cfg, d_in=6), seed=7)
    bag = rng.normal(size=(14, 6))
    before, _ = model.forward(bag)
    after, _ = model.forward(bag[::-1])
    order_dep = not np.allclose(before.logits, after.logits)

    ok = norms_ok and residual_ok and perm_ok and order_dep
    _report(
        capsys, 3, ok,
        f"{trips} exact round-trips; norm dev {norm_dev:.2e} (tol 1e-12); "
        f"residual identity {'exact' if residual_ok else 'BROKEN'}; "
        f"head invariant={perm_ok}, model order-dependent={order_dep}",
    )


# ---------------------------------------------------------------------------
# criterion 4: zero positional kernels reduce to vanilla attention


def test_criterion_4_zero_kernel_degeneracy(capsys):
    rng = np.random.default_rng(0)
    checked = 0
    ok = True
    for variant in ("attn", "value"):
        for _ in range(10):
            d, nh = 8, 2
            i = int(rng.integers(1, 50))
            l = int(rng.choice([1, 2, 4]))
            with_pe = init_region_attn_params("a", d, nh, 5, rng, use_pos_conv=True, pos_conv_variant=variant)
            without = init_region_attn_params("b", d, nh, 5, rng, use_pos_conv=False)
            for name in ("wq", "wk", "wv", "wo"):
                getattr(without.attn, name).values[...] = getattr(with_pe.attn, name).values
            h = rng.normal(size=(i, d))
            a, _ = region_attention(h, with_pe, l)  # kernels still zero-initialized
            b, _ = region_attention(h, without, l)
            ok = ok and np.array_equal(a, b)
            checked += 1
    _report(capsys, 4, ok, f"{checked} configs bit-for-bit across both variants")


# ---------------------------------------------------------------------------
# criteria 5 and 7: desk-scale learning on the plain witness task


C5_SYNTH = SynthConfig(
    n_bags=200, instances_min=64, instances_max=128, D=64,
    witness_ratio=0.2, shift=3.0, locality="none", seed=1,
)
# stock flags; width 64 matches the feature width (the 512-wide default needs
# ~65 s/bag-epoch here, two orders past the stated runtime budget)
C5_CFG = RunConfig(D=64, seed=1)


@pytest.fixture(scope="module")
def c5_dataset(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("c5_data"))
    manifest = synthesize_dataset(C5_SYNTH, out)
    records = load_manifest(manifest)
    return records, load_bags(records)


def _run_c5_cv(records, bags, cfg):
    folds = kfold_split(records, k=3, seed=cfg.seed)
    settings = model_settings(cfg, d_in=64)
    result = cross_validate(
        bags, folds, lambda f: Model(settings, cfg.seed + f), train_config(cfg), jobs=1
    )
    return result


_c5_histories = {}


def test_criterion_5_desk_scale_learning(capsys, c5_dataset):
    records, bags = c5_dataset
    t0 = time.time()
    reemb = _run_c5_cv(records, bags, C5_CFG)
    base_cfg = RunConfig(**{**C5_CFG.__dict__, "n_blocks": 0})
    baseline = _run_c5_cv(records, bags, base_cfg)
    wall = time.time() - t0
    _c5_histories["reemb"] = [history_to_csv(f.train_result.history) for f in reemb.folds]
    ok = reemb.mean["auc"] >= 0.95 and baseline.mean["auc"] >= 0.9 and wall < 1200
    _report(
        capsys, 5, ok,
        f"re-embedded mean test AUC {reemb.mean['auc']:.4f} (need >= 0.95), "
        f"pooling-only baseline {baseline.mean['auc']:.4f} (need >= 0.9), "
        f"{wall:.0f}s single-threaded (budget 1200s)",
    )


def test_criterion_7_determinism(capsys, c5_dataset):
    records, bags = c5_dataset
    if "reemb" not in _c5_histories:  # criterion 5 must have run first
        _c5_histories["reemb"] = [
            history_to_csv(f.train_result.history)
            for f in _run_c5_cv(records, bags, C5_CFG).folds
        ]
    rerun = _run_c5_cv(records, bags, C5_CFG)
    fresh = [history_to_csv(f.train_result.history) for f in rerun.folds]
    ok = fresh == _c5_histories["reemb"]
    matched = sum(a == b for a, b in zip(fresh, _c5_histories["reemb"]))
    _report(capsys, 7, ok, f"{matched}/3 fold histories byte-identical across reruns")


# ---------------------------------------------------------------------------
# criterion 6: locality advantage on the paired-witness task


C6_SYNTH = dict(
    n_bags=300, instances_min=64, instances_max=128, D=64,
    witness_ratio=0.05, shift=2.0, locality="two_type_window", window=8,
)
# Small width plus strong decay: the pair signal is weak, and a wide model
# memorizes the training folds before the locality pattern wins.
C6_CFG = RunConfig(
    L=2, D=32, N_head=4, pos_conv_k=15, mil_hidden=32,
    lr=1e-3, weight_decay=1e-2, epochs=60, patience=60, seed=1,
    mask_padding=True,
)
C6_SEEDS = (1, 2, 3, 4, 5)


def test_criterion_6_locality_advantage(capsys, tmp_path_factory):
    from remil.train import run_fold

    reemb_aucs, base_aucs = [], []
    for seed in C6_SEEDS:
        out = str(tmp_path_factory.mktemp(f"c6_s{seed}"))
        manifest = synthesize_dataset(SynthConfig(seed=seed, **C6_SYNTH), out)
        records = load_manifest(manifest)
        bags = load_bags(records)
        split = kfold_split(records, k=3, seed=seed)[0]
        triple = (
            [bags[i] for i in split.train_ids],
            [bags[i] for i in split.val_ids],
            [bags[i] for i in split.test_ids],
        )
        for aucs, n_blocks in ((reemb_aucs, 1), (base_aucs, 0)):
            cfg = RunConfig(**{**C6_CFG.__dict__, "seed": seed, "n_blocks": n_blocks})
            fr = run_fold(
                triple, lambda f: Model(model_settings(cfg, 64), cfg.seed + f),
                train_config(cfg), 0,
            )
            aucs.append(fr.test_metrics.auc)
    reemb_mean = float(np.mean(reemb_aucs))
    base_mean = float(np.mean(base_aucs))
    gap = reemb_mean - base_mean
    ok = reemb_mean >= base_mean
    _report(
        capsys, 6, ok,
        f"re-embedded mean test AUC {reemb_mean:.4f} vs pooling-only {base_mean:.4f}, "
        f"gap {gap:+.4f} over seeds {C6_SEEDS} "
        f"(per-seed re-embedded {[round(a, 3) for a in reemb_aucs]}, "
        f"baseline {[round(a, 3) for a in base_aucs]})",
    )


# ---------------------------------------------------------------------------
# criterion 8: metric oracles


def test_criterion_8_metric_oracles(capsys):
    auc = run_auc_suite(n_sets=1000, seed=2, tol=1e-12)
    th = run_threshold_suite(n_sets=1000, seed=3, tol=1e-12)
    dev = max(auc.max_abs_dev, th.max_abs_dev)
    ok = auc.passed and th.passed
    _report(
        capsys, 8, ok,
        f"1000+1000 score sets, max dev {dev:.2e} (tol 1e-12)",
    )
