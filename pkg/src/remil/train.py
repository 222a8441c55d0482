"""Training loop, evaluation metrics, and cross-validation orchestration.

One bag per optimizer step, Adam with coupled weight decay, a per-epoch
cosine learning-rate schedule, and early stopping on a monitored validation
metric. Binary evaluation reports AUC (Mann-Whitney, ties counted half) plus
accuracy and F1 at the threshold chosen by Youden's J or maximum F1.

Everything is deterministic given the seeds: bag order comes from one
Generator per run, fold replicas derive their seeds as seed + fold index.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

THRESHOLD_RULES = ("youden", "f1max")
MONITORS = ("auc", "accuracy", "f1")


@dataclass
class TrainConfig:
    lr: float = 2e-4
    weight_decay: float = 1e-5
    epochs: int = 200
    patience: int = 30
    seed: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    monitor: str = "auc"
    threshold_rule: str = "youden"

    def validate(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 1 <= self.patience <= self.epochs:
            raise ValueError("need 1 <= patience <= epochs")
        if self.monitor not in MONITORS:
            raise ValueError(f"unknown monitor {self.monitor!r}")
        if self.threshold_rule not in THRESHOLD_RULES:
            raise ValueError(f"unknown threshold rule {self.threshold_rule!r}")
        return self


@dataclass
class Metrics:
    accuracy: float
    auc: float
    f1: float
    threshold: float
    n_pos: int
    n_neg: int

    def as_dict(self):
        return {
            "accuracy": self.accuracy,
            "auc": self.auc,
            "f1": self.f1,
            "threshold": self.threshold,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
        }


@dataclass
class EpochRecord:
    epoch: int  # 1-based
    train_loss: float
    val_metrics: Metrics
    lr: float


# ---------------------------------------------------------------------------
# schedule and optimizer


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


class AdamState:
    def __init__(self, tensors):
        self.m = {t.name: np.zeros_like(t.values) for t in tensors}
        self.v = {t.name: np.zeros_like(t.values) for t in tensors}
        self.step = 0


def adam_step(tensors, state: AdamState, lr: float, cfg: TrainConfig):
    """Bias-corrected Adam; weight decay enters as an L2 term on the gradient."""
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for p in tensors:
        g = p.grad + cfg.weight_decay * p.values
        m = state.m[p.name]
        v = state.v[p.name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p.values -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps_adam)


# ---------------------------------------------------------------------------
# metrics


def _check_binary(labels):
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != labels.size:
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative")
    return n_pos, n_neg


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count half. Exact for any ordering
    because it accumulates integer and half-integer pair counts."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos, n_neg = _check_binary(labels)
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    y = labels[order]
    num = 0.0
    neg_below = 0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        pos_here = int((y[i:j] == 1).sum())
        neg_here = (j - i) - pos_here
        num += pos_here * neg_below + 0.5 * pos_here * neg_here
        neg_below += neg_here
        i = j
    return num / (n_pos * n_neg)


def optimal_threshold_metrics(scores, labels, rule="youden") -> Metrics:
    """Scan thresholds at midpoints of adjacent unique scores plus the two
    infinities; predict positive where score > threshold. Ties on the
    selection objective keep the lowest threshold."""
    if rule not in THRESHOLD_RULES:
        raise ValueError(f"unknown threshold rule {rule!r}")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos, n_neg = _check_binary(labels)
    auc = roc_auc(scores, labels)

    uniq = np.unique(scores)
    candidates = [-math.inf]
    candidates.extend((uniq[i] + uniq[i + 1]) / 2.0 for i in range(uniq.size - 1))
    candidates.append(math.inf)

    best = None
    for th in candidates:
        pred = scores > th
        tp = int((pred & (labels == 1)).sum())
        fp = int((pred & (labels == 0)).sum())
        fn = n_pos - tp
        tn = n_neg - fp
        j = tp / n_pos - fp / n_neg
        f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
        objective = j if rule == "youden" else f1
        if best is None or objective > best[0]:
            best = (objective, th, (tp + tn) / (n_pos + n_neg), f1)
    _, th, acc, f1 = best
    return Metrics(acc, auc, f1, th, n_pos, n_neg)


def evaluate(model, bags, rule="youden") -> Metrics:
    """bags: list of (x, label); scores are positive-class probabilities."""
    scores = []
    labels = []
    for x, label in bags:
        pred, _ = model.forward(x)
        scores.append(pred.probs[1])
        labels.append(label)
    return optimal_threshold_metrics(scores, labels, rule)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    best_values: dict
    history: list
    best_epoch: int
    stopped_epoch: int

    @property
    def best_val(self) -> Metrics:
        return self.history[self.best_epoch - 1].val_metrics


def train_model(train_bags, val_bags, model, cfg: TrainConfig) -> TrainResult:
    """Optimize on train_bags, early-stop on val_bags, keep the best epoch.

    Improvement is strict; after `patience` stale epochs training stops. The
    returned values are from the best epoch, not the last.
    """
    cfg.validate()
    if not train_bags or not val_bags:
        raise ValueError("train and val sets must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    state = AdamState(params)

    best_metric = -math.inf
    best_values = model.get_values()
    best_epoch = 0
    history = []
    wait = 0
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        lr = cosine_lr(epoch - 1, cfg)
        losses = []
        for idx in rng.permutation(len(train_bags)):
            x, label = train_bags[idx]
            model.zero_grad()
            loss, _ = model.loss_on_bag(x, label)
            adam_step(params, state, lr, cfg)
            losses.append(loss)
        m = evaluate(model, val_bags, cfg.threshold_rule)
        history.append(EpochRecord(epoch, float(np.mean(losses)), m, lr))
        current = getattr(m, cfg.monitor)
        if current > best_metric:
            best_metric = current
            best_values = model.get_values()
            best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    return TrainResult(best_values, history, best_epoch, epoch)


def history_to_csv(history) -> str:
    lines = ["epoch,train_loss,val_auc,val_acc,val_f1,lr"]
    for rec in history:
        m = rec.val_metrics
        lines.append(
            f"{rec.epoch},{rec.train_loss!r},{m.auc!r},{m.accuracy!r},{m.f1!r},{rec.lr!r}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class FoldResult:
    fold: int
    test_metrics: Metrics
    train_result: TrainResult


@dataclass
class CVResult:
    folds: list
    mean: dict
    std: dict


def run_fold(fold_bags, make_model, cfg: TrainConfig, fold_index: int) -> FoldResult:
    """fold_bags: (train, val, test) lists of (x, label)."""
    train_bags, val_bags, test_bags = fold_bags
    model = make_model(fold_index)
    fold_cfg = TrainConfig(**{**cfg.__dict__, "seed": cfg.seed + fold_index})
    result = train_model(train_bags, val_bags, model, fold_cfg)
    model.set_values(result.best_values)
    metrics = evaluate(model, test_bags, cfg.threshold_rule)
    return FoldResult(fold_index, metrics, result)


def cross_validate(bags_by_id, folds, make_model, cfg: TrainConfig, jobs=1) -> CVResult:
    """bags_by_id: {bag_id: (x, label)}; folds: FoldSplit list.

    Each fold trains an independent replica (seed + fold_index); folds may
    run on separate threads since replicas share no mutable state.
    """

    def bags_for(ids):
        return [bags_by_id[i] for i in ids]

    def one(fold):
        triple = (
            bags_for(fold.train_ids),
            bags_for(fold.val_ids),
            bags_for(fold.test_ids),
        )
        return run_fold(triple, make_model, cfg, fold.fold_index)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, folds))
    else:
        results = [one(f) for f in folds]

    keys = ("accuracy", "auc", "f1")
    mean = {k: float(np.mean([getattr(r.test_metrics, k) for r in results])) for k in keys}
    std = {
        k: float(np.std([getattr(r.test_metrics, k) for r in results], ddof=1))
        for k in keys
    }
    return CVResult(results, mean, std)
