"""Dataset plumbing: feature files, manifests, splits, synthetic bags.

Feature files are little-endian binary: 4-byte magic, a version byte, u32
instance count, u32 width, then float32 row-major payload. Manifests and
split files are tab-separated UTF-8 text.

The synthetic generator builds bags whose positive evidence can be spread
anywhere, forced into one contiguous index run, or (hardest) split across
two witness types that only make the bag positive when they sit within a
small index window of each other — a signal invisible to any pooling that
ignores instance adjacency.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

FEATURE_MAGIC = b"RMLF"
FEATURE_VERSION = 1

LOCALITY_MODES = ("none", "contiguous_run", "two_type_window")


@dataclass
class InstanceFeatures:
    bag_id: str
    features: np.ndarray  # (I, D) float32


@dataclass
class BagRecord:
    bag_id: str
    feature_path: str
    label: int


@dataclass
class FoldSplit:
    fold_index: int
    train_ids: list
    val_ids: list
    test_ids: list


@dataclass
class SynthConfig:
    n_bags: int = 200
    instances_min: int = 64
    instances_max: int = 128
    D: int = 64
    witness_ratio: float = 0.2
    shift: float = 3.0
    locality: str = "none"
    window: int = 8
    seed: int = 1

    def validate(self):
        if self.n_bags < 2:
            raise ValueError("n_bags must be >= 2 so both classes occur")
        if self.instances_min < 1 or self.instances_min > self.instances_max:
            raise ValueError("need 1 <= instances_min <= instances_max")
        if self.D < 1:
            raise ValueError("D must be >= 1")
        if not 0.0 < self.witness_ratio <= 1.0:
            raise ValueError(f"witness_ratio must be in (0, 1], got {self.witness_ratio}")
        if self.locality not in LOCALITY_MODES:
            raise ValueError(f"unknown locality mode {self.locality!r}")
        if self.locality == "two_type_window":
            if self.window < 1:
                raise ValueError("window must be >= 1")
            if self.D < 2:
                raise ValueError("two_type_window needs D >= 2")
        return self


# ---------------------------------------------------------------------------
# feature files


def write_features(bag: InstanceFeatures, path):
    feats = np.asarray(bag.features)
    if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
        raise ValueError(f"features must be a non-empty 2-d matrix, got {feats.shape}")
    if not np.all(np.isfinite(feats)):
        raise ValueError(f"non-finite features in bag {bag.bag_id!r}")
    i, d = feats.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<BII", FEATURE_VERSION, i, d))
        fh.write(feats.astype("<f4").tobytes())


def read_features(path, bag_id=None) -> InstanceFeatures:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise ValueError(f"bad magic {magic!r} in {path}")
        header = fh.read(9)
        if len(header) < 9:
            raise ValueError(f"truncated header in {path}")
        version, i, d = struct.unpack("<BII", header)
        if version != FEATURE_VERSION:
            raise ValueError(f"unsupported feature-file version {version} in {path}")
        payload = fh.read(4 * i * d)
        if len(payload) != 4 * i * d:
            raise ValueError(f"truncated payload in {path}: header declares {i}x{d}")
        feats = np.frombuffer(payload, dtype="<f4").reshape(i, d).copy()
    if bag_id is None:
        bag_id = os.path.splitext(os.path.basename(path))[0]
    return InstanceFeatures(bag_id=bag_id, features=feats)


# ---------------------------------------------------------------------------
# manifests and splits


def load_manifest(path, n_classes=None) -> list:
    """One record per line: bag_id<TAB>relative_feature_path<TAB>label.

    Feature paths are resolved relative to the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{ln}: expected 3 tab-separated fields")
            bag_id, rel, label_text = parts
            try:
                label = int(label_text)
            except ValueError:
                raise ValueError(f"{path}:{ln}: label {label_text!r} is not an integer")
            if bag_id in seen:
                raise ValueError(f"{path}:{ln}: duplicate bag_id {bag_id!r}")
            if label < 0 or (n_classes is not None and label >= n_classes):
                raise ValueError(f"{path}:{ln}: label {label} out of range")
            seen.add(bag_id)
            records.append(BagRecord(bag_id, os.path.join(base, rel), label))
    return records


def write_split_file(path, folds):
    with open(path, "w", encoding="utf-8") as fh:
        for fold in folds:
            for role, ids in (
                ("train", fold.train_ids),
                ("val", fold.val_ids),
                ("test", fold.test_ids),
            ):
                for bag_id in ids:
                    fh.write(f"{fold.fold_index}\t{role}\t{bag_id}\n")


def read_split_file(path) -> list:
    by_fold = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{ln}: expected fold<TAB>role<TAB>bag_id")
            fold_text, role, bag_id = parts
            try:
                fold = int(fold_text)
            except ValueError:
                raise ValueError(f"{path}:{ln}: fold {fold_text!r} is not an integer")
            if role not in ("train", "val", "test"):
                raise ValueError(f"{path}:{ln}: unknown role {role!r}")
            entry = by_fold.setdefault(fold, FoldSplit(fold, [], [], []))
            getattr(entry, f"{role}_ids").append(bag_id)
    return [by_fold[f] for f in sorted(by_fold)]


VAL_FRACTION = 0.2


def kfold_split(records, k: int, seed: int) -> list:
    """Stratified k folds with a per-fold validation carve-out.

    Each class's bags are shuffled once and dealt round-robin into k test
    buckets; fold i tests on bucket i and carves 20% per class (at least one
    bag, classes with a single train bag excepted) out of the rest for early
    stopping.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    by_class = {}
    for r in records:
        by_class.setdefault(r.label, []).append(r.bag_id)
    rng = np.random.default_rng(seed)
    shuffled = {}
    for label in sorted(by_class):
        ids = by_class[label]
        if len(ids) < k:
            raise ValueError(f"class {label} has {len(ids)} bags, fewer than k={k}")
        shuffled[label] = [ids[j] for j in rng.permutation(len(ids))]

    folds = []
    for f in range(k):
        test, train, val = [], [], []
        fold_rng = np.random.default_rng((seed, f))
        for label in sorted(shuffled):
            ids = shuffled[label]
            test_c = ids[f::k]
            pool = [b for b in ids if b not in set(test_c)]
            pool = [pool[j] for j in fold_rng.permutation(len(pool))]
            n_val = max(1, int(VAL_FRACTION * len(pool))) if len(pool) >= 2 else 0
            val.extend(pool[:n_val])
            train.extend(pool[n_val:])
            test.extend(test_c)
        folds.append(FoldSplit(f, train, val, test))
    return folds


# ---------------------------------------------------------------------------
# synthetic bags


def _witness_count(ratio, i):
    return max(1, math.ceil(ratio * i))


def _plant_positive(feats, cfg: SynthConfig, rng):
    i = feats.shape[0]
    if cfg.locality == "none":
        idx = rng.choice(i, size=_witness_count(cfg.witness_ratio, i), replace=False)
        feats[idx, 0] += cfg.shift
    elif cfg.locality == "contiguous_run":
        n = _witness_count(cfg.witness_ratio, i)
        start = int(rng.integers(0, i - n + 1))
        feats[start : start + n, 0] += cfg.shift
    else:  # two_type_window: guarantee one A-B pair within the window
        n_a, n_b = _two_type_counts(cfg.witness_ratio, i)
        a = int(rng.integers(0, i))
        delta = int(rng.integers(1, min(cfg.window, i - 1) + 1))
        b = a + delta if a + delta < i else a - delta
        free = [j for j in range(i) if j not in (a, b)]
        extra = rng.choice(len(free), size=n_a + n_b - 2, replace=False)
        picks = [free[j] for j in extra]
        a_pos = [a] + picks[: n_a - 1]
        b_pos = [b] + picks[n_a - 1 :]
        feats[a_pos, 0] += cfg.shift
        feats[b_pos, 1] += cfg.shift


def _two_type_counts(ratio, i):
    n = max(2, _witness_count(ratio, i))
    n = min(n, i)  # tiny bags: cannot exceed the instance count
    n_b = max(1, n // 2)
    return n - n_b, n_b


def _plant_negative(feats, cfg: SynthConfig, rng):
    """two_type_window negatives carry both witness types but no close pair."""
    i = feats.shape[0]
    n_a, n_b = _two_type_counts(cfg.witness_ratio, i)
    for _ in range(10000):
        picks = rng.choice(i, size=n_a + n_b, replace=False)
        a_pos, b_pos = picks[:n_a], picks[n_a:]
        gap = min(abs(int(a) - int(b)) for a in a_pos for b in b_pos)
        if gap > cfg.window:
            feats[a_pos, 0] += cfg.shift
            feats[b_pos, 1] += cfg.shift
            return
    raise RuntimeError(
        "could not separate witness types beyond the window; "
        "reduce window or witness_ratio"
    )


def synthesize_dataset(cfg: SynthConfig, out_dir) -> str:
    """Writes feature files plus a manifest; returns the manifest path.

    Bag b is positive iff b is odd, so classes stay balanced to within one
    bag. Each bag draws from its own spawned RNG stream, so output
    bytes depend only on the config.
    """
    cfg.validate()
    feat_dir = os.path.join(out_dir, "features")
    os.makedirs(feat_dir, exist_ok=True)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_bags)
    lines = []
    for b in range(cfg.n_bags):
        rng = np.random.default_rng(streams[b])
        label = b % 2
        i = int(rng.integers(cfg.instances_min, cfg.instances_max + 1))
        feats = rng.standard_normal((i, cfg.D))
        if label == 1:
            _plant_positive(feats, cfg, rng)
        elif cfg.locality == "two_type_window":
            _plant_negative(feats, cfg, rng)
        bag_id = f"bag{b:05d}"
        rel = os.path.join("features", f"{bag_id}.bin")
        write_features(
            InstanceFeatures(bag_id, feats.astype(np.float32)),
            os.path.join(out_dir, rel),
        )
        lines.append(f"{bag_id}\t{rel}\t{label}\n")
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)
    return manifest_path


def load_bags(records) -> dict:
    """Read every record's features as float64; returns {bag_id: (x, label)}."""
    out = {}
    for r in records:
        feats = read_features(r.feature_path, r.bag_id).features.astype(np.float64)
        out[r.bag_id] = (feats, r.label)
    return out
