"""Brute-force reference implementations and equivalence suites.

Everything here recomputes a fast-path result with explicit loops and its
own index arithmetic - no geometry helpers, no vectorized attention, no
shared softmax. The naive functions read parameter values as plain arrays
but never call the production code paths; the ``run_*_suite`` helpers do
call both sides, since their whole job is to diff them.

These are deliberately O(n^2)-or-worse and only run in tests and the
``oracle`` CLI subcommand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class OracleReport:
    suite: str
    max_abs_dev: float
    shapes_tested: list
    passed: bool
    tolerance: float

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"{self.suite:<24s} configs={len(self.shapes_tested):<5d} "
            f"max_dev={self.max_abs_dev:.3e} tol={self.tolerance:.0e} {status}"
        )


# ---------------------------------------------------------------------------
# naive attention pieces


def _naive_softmax_row(row):
    mx = max(row)
    ex = [math.exp(v - mx) for v in row]
    tot = sum(ex)
    return [v / tot for v in ex]


def _naive_msa(xs, attn):
    """Loop multi-head attention over a list of D-vectors; returns a list."""
    p = len(xs)
    d = xs[0].shape[0]
    nh = attn.n_head
    dh = d // nh
    scale = math.sqrt(d) if attn.scale_full_d else math.sqrt(dh)
    heads = []
    for hh in range(nh):
        cols = slice(hh * dh, (hh + 1) * dh)
        q = [x @ attn.wq.values[:, cols] for x in xs]
        k = [x @ attn.wk.values[:, cols] for x in xs]
        v = [x @ attn.wv.values[:, cols] for x in xs]
        rows = []
        for iq in range(p):
            logits = [float(np.dot(q[iq], k[jk])) / scale for jk in range(p)]
            alpha = _naive_softmax_row(logits)
            acc = np.zeros(dh)
            for jk in range(p):
                acc = acc + alpha[jk] * v[jk]
            rows.append(acc)
        heads.append(rows)
    out = []
    for iq in range(p):
        concat = np.concatenate([heads[hh][iq] for hh in range(nh)])
        out.append(concat @ attn.wo.values)
    return out


def naive_region_attention(h, params, regions_per_side, mask_padding=False):
    """Regional attention recomputed cell by cell with its own grid math."""
    h = np.asarray(h, dtype=np.float64)
    i_count, d = h.shape
    side = 1
    while side * side < i_count:
        side += 1
    while side % regions_per_side != 0:
        side += 1
    m = side // regions_per_side
    attn = params.attn
    nh = attn.n_head
    dh = d // nh
    scale = math.sqrt(d) if attn.scale_full_d else math.sqrt(dh)
    kern = params.pos_conv_kernels.values
    taps = kern.shape[1]
    half = (taps - 1) // 2
    use_pos_conv = params.use_pos_conv

    out = [np.zeros(d) for _ in range(side * side)]
    for a in range(regions_per_side):
        for b in range(regions_per_side):
            cells = [
                (a * m + r) * side + (b * m + c)
                for r in range(m)
                for c in range(m)
            ]
            xs = [h[idx] if idx < i_count else np.zeros(d) for idx in cells]
            masked = [mask_padding and idx >= i_count for idx in cells]
            p = len(xs)
            head_rows = []
            for hh in range(nh):
                cols = slice(hh * dh, (hh + 1) * dh)
                q = [x @ attn.wq.values[:, cols] for x in xs]
                k = [x @ attn.wk.values[:, cols] for x in xs]
                v = [x @ attn.wv.values[:, cols] for x in xs]
                if use_pos_conv and params.pos_conv_variant == "value":
                    conv = []
                    for jpos in range(p):
                        acc = v[jpos].copy()
                        for tpos in range(taps):
                            src = jpos + tpos - half
                            if 0 <= src < p:
                                acc = acc + kern[hh, tpos] * v[src]
                        conv.append(acc)
                    v = conv
                e = [
                    [float(np.dot(q[iq], k[jk])) / scale for jk in range(p)]
                    for iq in range(p)
                ]
                if use_pos_conv and params.pos_conv_variant == "attn":
                    g = [
                        [
                            e[iq][jk]
                            + sum(
                                kern[hh, tpos] * e[iq][jk + tpos - half]
                                for tpos in range(taps)
                                if 0 <= jk + tpos - half < p
                            )
                            for jk in range(p)
                        ]
                        for iq in range(p)
                    ]
                else:
                    g = [row[:] for row in e]
                rows = []
                for iq in range(p):
                    biased = [
                        g[iq][jk] + (-1e30 if masked[jk] else 0.0) for jk in range(p)
                    ]
                    alpha = _naive_softmax_row(biased)
                    acc = np.zeros(dh)
                    for jk in range(p):
                        acc = acc + alpha[jk] * v[jk]
                    rows.append(acc)
                head_rows.append(rows)
            for iq in range(p):
                concat = np.concatenate([head_rows[hh][iq] for hh in range(nh)])
                out[cells[iq]] = concat @ attn.wo.values
    return np.array(out[:i_count])


def naive_cross_region(zhat, params):
    """Scalar transcription of the pool -> attend -> scatter pipeline."""
    zhat = np.asarray(zhat, dtype=np.float64)
    n_regions, p_count, d = zhat.shape
    phi = params.phi.values
    n_slots = phi.shape[1]

    logits = [
        [
            [
                sum(zhat[r, p, c] * phi[c, k] for c in range(d))
                for p in range(p_count)
            ]
            for k in range(n_slots)
        ]
        for r in range(n_regions)
    ]
    combine = [
        [_naive_softmax_row(logits[r][k]) for k in range(n_slots)]
        for r in range(n_regions)
    ]
    dispatch_soft = [
        [
            _naive_softmax_row([logits[r][k][p] for k in range(n_slots)])
            for p in range(p_count)
        ]
        for r in range(n_regions)
    ]
    minmax = []
    for r in range(n_regions):
        per_slot = []
        for k in range(n_slots):
            row = logits[r][k]
            lo, hi = min(row), max(row)
            per_slot.append([(val - lo) / (hi - lo + 1e-8) for val in row])
        minmax.append(per_slot)

    rep = np.zeros((n_regions, n_slots, d))
    for r in range(n_regions):
        for k in range(n_slots):
            acc = np.zeros(d)
            for p in range(p_count):
                acc = acc + combine[r][k][p] * zhat[r, p]
            rep[r, k] = acc

    rhat = np.zeros_like(rep)
    if params.attn_axis == "region":
        for k in range(n_slots):
            rows = _naive_msa([rep[r, k] for r in range(n_regions)], params.inner)
            for r in range(n_regions):
                rhat[r, k] = rows[r]
    else:
        for r in range(n_regions):
            rows = _naive_msa([rep[r, k] for k in range(n_slots)], params.inner)
            for k in range(n_slots):
                rhat[r, k] = rows[k]

    out = np.zeros_like(zhat)
    for r in range(n_regions):
        for p in range(p_count):
            acc = np.zeros(d)
            for k in range(n_slots):
                acc = acc + dispatch_soft[r][p][k] * minmax[r][k][p] * rhat[r, k]
            out[r, p] = acc
    return out


# ---------------------------------------------------------------------------
# naive head and metrics


def naive_gated_pool(z, params):
    """Scalar gated-attention pooling; returns (bag, alpha)."""
    z = np.asarray(z, dtype=np.float64)
    i_count, d = z.shape
    hidden = params.v.values.shape[1]
    scores = []
    for i in range(i_count):
        s = 0.0
        for j in range(hidden):
            t = math.tanh(sum(z[i, c] * params.v.values[c, j] for c in range(d)))
            if params.gated:
                g = 1.0 / (
                    1.0
                    + math.exp(-sum(z[i, c] * params.u.values[c, j] for c in range(d)))
                )
                t = t * g
            s += t * params.w.values[j]
        scores.append(s)
    alpha = _naive_softmax_row(scores)
    bag = np.zeros(d)
    for i in range(i_count):
        bag = bag + alpha[i] * z[i]
    return bag, np.array(alpha)


def naive_cross_entropy(logits, label):
    mx = max(logits)
    tot = sum(math.exp(v - mx) for v in logits)
    return -(logits[label] - mx - math.log(tot))


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    if not pos or not neg:
        raise ValueError("need both classes")
    num = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                num += 1.0
            elif sp == sn:
                num += 0.5
    return num / (len(pos) * len(neg))


def naive_threshold_scan(scores, labels, rule="youden"):
    """Exhaustive enumeration; returns (threshold, accuracy, f1)."""
    uniq = sorted(set(float(s) for s in scores))
    candidates = [-math.inf]
    for i in range(len(uniq) - 1):
        candidates.append((uniq[i] + uniq[i + 1]) / 2.0)
    candidates.append(math.inf)
    n_pos = sum(1 for y in labels if y == 1)
    n_neg = len(labels) - n_pos
    best = None
    for th in candidates:
        tp = fp = 0
        for s, y in zip(scores, labels):
            if s > th:
                if y == 1:
                    tp += 1
                else:
                    fp += 1
        fn = n_pos - tp
        tn = n_neg - fp
        j = tp / n_pos - fp / n_neg
        f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
        objective = j if rule == "youden" else f1
        if best is None or objective > best[0]:
            best = (objective, th, (tp + tn) / len(labels), f1)
    return best[1], best[2], best[3]


# ---------------------------------------------------------------------------
# equivalence suites


def _random_region_attn_params(rng, d, nh, pos_conv_k, variant, scale_full_d=False):
    from .numerics import ParamTensor
    from .region_attn import AttentionParams, RegionAttnParams

    def mat(name):
        return ParamTensor(name, rng.normal(scale=0.5, size=(d, d)))

    attn = AttentionParams(
        mat("wq"), mat("wk"), mat("wv"), mat("wo"), n_head=nh, scale_full_d=scale_full_d
    )
    kern = ParamTensor("pos_conv", rng.normal(scale=0.3, size=(nh, pos_conv_k)))
    return RegionAttnParams(attn, kern, use_pos_conv=True, pos_conv_variant=variant)


def run_region_attention_suite(n_configs=50, seed=0, tol=1e-10) -> OracleReport:
    from .region_attn import region_attention

    rng = np.random.default_rng(seed)
    max_dev = 0.0
    shapes = []
    for it in range(n_configs):
        # first four configs sweep the region grid deterministically
        l = (1, 2, 4, 8)[it] if it < 4 else int(rng.choice([1, 2, 4, 8]))
        nh = int(rng.choice([1, 2, 4]))
        d = nh * int(rng.choice([2, 4]))
        i = int(rng.integers(1, 61))
        pos_conv_k = int(rng.choice([1, 3, 5, 7]))
        variant = ["attn", "value"][int(rng.integers(0, 2))]
        mask = bool(rng.integers(0, 2))
        scale_full = bool(rng.integers(0, 2))
        params = _random_region_attn_params(rng, d, nh, pos_conv_k, variant, scale_full)
        h = rng.normal(size=(i, d))
        fast, _ = region_attention(h, params, l, mask_padding=mask)
        slow = naive_region_attention(h, params, l, mask_padding=mask)
        max_dev = max(max_dev, float(np.abs(fast - slow).max()))
        shapes.append((i, d, l))
    return OracleReport("region_attention", max_dev, shapes, max_dev < tol, tol)


def run_cross_region_suite(n_configs=50, seed=0, tol=1e-10) -> OracleReport:
    from .cross_region import CrossRegionParams, cross_region_mix
    from .numerics import ParamTensor
    from .region_attn import AttentionParams

    rng = np.random.default_rng(seed)
    max_dev = 0.0
    shapes = []
    for _ in range(n_configs):
        l = int(rng.integers(1, 4))
        m = int(rng.integers(1, 4))
        nh = int(rng.choice([1, 2]))
        d = nh * int(rng.choice([2, 4]))
        slots = int(rng.integers(1, 5))
        axis = ["region", "slot"][int(rng.integers(0, 2))]

        def mat(name):
            return ParamTensor(name, rng.normal(scale=0.5, size=(d, d)))

        params = CrossRegionParams(
            phi=ParamTensor("phi", rng.normal(scale=0.5, size=(d, slots))),
            inner=AttentionParams(mat("wq"), mat("wk"), mat("wv"), mat("wo"), n_head=nh),
            attn_axis=axis,
        )
        zhat = rng.normal(size=(l * l, m * m, d))
        fast, _ = cross_region_mix(zhat, params)
        slow = naive_cross_region(zhat, params)
        max_dev = max(max_dev, float(np.abs(fast - slow).max()))
        shapes.append((l * l, m * m, d, slots))
    return OracleReport("cross_region", max_dev, shapes, max_dev < tol, tol)


def _random_scored_labels(rng):
    n = int(rng.integers(2, 41))
    labels = rng.integers(0, 2, size=n)
    while labels.min() == labels.max():
        labels = rng.integers(0, 2, size=n)
    scores = rng.normal(size=n)
    if rng.integers(0, 2):
        scores = np.round(scores, 1)  # force ties
    return scores, labels


def run_auc_suite(n_sets=1000, seed=0, tol=1e-12) -> OracleReport:
    from .train import roc_auc

    rng = np.random.default_rng(seed)
    max_dev = 0.0
    shapes = []
    for _ in range(n_sets):
        scores, labels = _random_scored_labels(rng)
        dev = abs(roc_auc(scores, labels) - pairwise_auc(list(scores), list(labels)))
        max_dev = max(max_dev, dev)
        shapes.append(len(scores))
    return OracleReport("roc_auc", max_dev, shapes, max_dev < tol, tol)


def run_threshold_suite(n_sets=1000, seed=0, tol=1e-12) -> OracleReport:
    from .train import optimal_threshold_metrics

    rng = np.random.default_rng(seed)
    max_dev = 0.0
    shapes = []
    for _ in range(n_sets):
        scores, labels = _random_scored_labels(rng)
        rule = ["youden", "f1max"][int(rng.integers(0, 2))]
        m = optimal_threshold_metrics(scores, labels, rule)
        th, acc, f1 = naive_threshold_scan(list(scores), list(labels), rule)
        if math.isinf(th) or math.isinf(m.threshold):
            th_dev = 0.0 if th == m.threshold else math.inf
        else:
            th_dev = abs(th - m.threshold)
        dev = max(th_dev, abs(acc - m.accuracy), abs(f1 - m.f1))
        max_dev = max(max_dev, dev)
        shapes.append(len(scores))
    return OracleReport("optimal_threshold", max_dev, shapes, max_dev < tol, tol)


def run_all_suites(seed=0, n_attention=50, n_metrics=1000):
    return [
        run_region_attention_suite(n_attention, seed),
        run_cross_region_suite(n_attention, seed + 1),
        run_auc_suite(n_metrics, seed + 2),
        run_threshold_suite(n_metrics, seed + 3),
    ]
