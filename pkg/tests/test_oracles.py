import math

import numpy as np
import pytest

from remil.oracles import (
    naive_cross_entropy,
    naive_threshold_scan,
    pairwise_auc,
    run_all_suites,
    run_auc_suite,
    run_cross_region_suite,
    run_region_attention_suite,
    run_threshold_suite,
)


def test_pairwise_auc_hand_values():
    assert pairwise_auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert pairwise_auc([0.1, 0.9], [1, 0]) == 0.0
    assert pairwise_auc([0.5, 0.5], [1, 0]) == 0.5
    assert pairwise_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_pairwise_auc_needs_both_classes():
    with pytest.raises(ValueError):
        pairwise_auc([0.1, 0.2], [1, 1])


def test_naive_threshold_scan_hand_values():
    th, acc, f1 = naive_threshold_scan([0.1, 0.2, 0.7, 0.8], [0, 0, 1, 1])
    assert th == pytest.approx(0.45)
    assert acc == 1.0 and f1 == 1.0
    th, acc, _ = naive_threshold_scan([0.5, 0.5], [0, 1])
    assert th == -math.inf
    assert acc == 0.5


def test_naive_cross_entropy_uniform_logits():
    assert naive_cross_entropy([0.0, 0.0], 0) == pytest.approx(math.log(2.0))
    assert naive_cross_entropy([0.0, 0.0, 0.0], 2) == pytest.approx(math.log(3.0))


def test_region_attention_suite_covers_the_grid():
    report = run_region_attention_suite(n_configs=8, seed=0)
    assert report.passed, str(report)
    sides = [shape[2] for shape in report.shapes_tested[:4]]
    assert sides == [1, 2, 4, 8]  # guaranteed sweep before random draws


def test_cross_region_suite_passes():
    report = run_cross_region_suite(n_configs=8, seed=0)
    assert report.passed, str(report)
    assert report.max_abs_dev < 1e-10


def test_metric_suites_pass():
    auc = run_auc_suite(n_sets=60, seed=0)
    th = run_threshold_suite(n_sets=60, seed=0)
    assert auc.passed and auc.max_abs_dev < 1e-12
    assert th.passed and th.max_abs_dev < 1e-12


def test_suites_are_deterministic_per_seed():
    a = run_region_attention_suite(n_configs=6, seed=3)
    b = run_region_attention_suite(n_configs=6, seed=3)
    assert a.max_abs_dev == b.max_abs_dev
    assert a.shapes_tested == b.shapes_tested
    c = run_region_attention_suite(n_configs=6, seed=4)
    assert a.shapes_tested != c.shapes_tested


def test_run_all_suites_reports_every_family():
    reports = run_all_suites(seed=0, n_attention=5, n_metrics=20)
    names = [r.suite for r in reports]
    assert names == ["region_attention", "cross_region", "roc_auc", "optimal_threshold"]
    assert all(r.passed for r in reports)
    assert all("pass" in str(r) for r in reports)
