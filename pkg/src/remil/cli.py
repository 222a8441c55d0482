"""Command-line front end: synth, train, eval, gradcheck, oracle, cv.

Every configuration key is also a command-line flag (``--epochs 50`` or
``--use_cross_region=false``); flags override values from ``--config``. Each
command writes the merged configuration next to its outputs so a run can
be replayed from the dump alone.

Exit codes: 0 success, 1 usage or data error, 2 check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

from .bagio import (
    SynthConfig,
    kfold_split,
    load_bags,
    load_manifest,
    read_split_file,
    synthesize_dataset,
    write_split_file,
)
from .checks import run_gradcheck
from .config import (
    RunConfig,
    coerce,
    dump_config,
    load_config_file,
    model_settings,
    train_config,
)
from .model import Model, load_checkpoint, save_checkpoint
from .oracles import run_all_suites
from .train import cross_validate, evaluate, history_to_csv, train_model


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; 2 is reserved for failed
    # checks here, so raise and let main() turn it into exit 1
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _add_config_flags(parser, cls):
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(cls):
        group.add_argument(f"--{f.name}", dest=f"cfg_{f.name}", metavar="V")


def _build_config(args, cls):
    cfg = load_config_file(args.config, cls) if args.config else cls()
    for f in dataclasses.fields(cls):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            setattr(cfg, f.name, coerce(raw, f.type, f.name))
    return cfg.validate()


def _write_effective(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "effective_config.cfg"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))


def _sanitize(obj):
    # strict JSON has no Infinity/NaN literals; encode them as strings
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def _emit(payload):
    print(json.dumps(_sanitize(payload), sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = _build_config(args, SynthConfig)
    _write_effective(cfg, args.out)
    manifest = synthesize_dataset(cfg, args.out)
    print(manifest)
    return 0


def _resolve_fold(folds, fold_index):
    for f in folds:
        if f.fold_index == fold_index:
            return f
    raise ValueError(f"fold {fold_index} not present in split")


def _load_fold_data(args, cfg):
    records = load_manifest(args.manifest, n_classes=cfg.n_classes)
    if args.split:
        folds = read_split_file(args.split)
    else:
        folds = kfold_split(records, k=args.k, seed=cfg.seed)
    bags = load_bags(records)
    d_in = next(iter(bags.values()))[0].shape[1]
    return records, folds, bags, d_in


def cmd_train(args) -> int:
    cfg = _build_config(args, RunConfig)
    records, folds, bags, d_in = _load_fold_data(args, cfg)
    fold = _resolve_fold(folds, args.fold)

    os.makedirs(args.out, exist_ok=True)
    _write_effective(cfg, args.out)
    if not args.split:
        write_split_file(os.path.join(args.out, "split.tsv"), folds)

    model = Model(model_settings(cfg, d_in), cfg.seed)
    result = train_model(
        [bags[i] for i in fold.train_ids],
        [bags[i] for i in fold.val_ids],
        model,
        train_config(cfg),
    )
    ckpt = os.path.join(args.out, "checkpoint.bin")
    save_checkpoint(ckpt, result.best_values)
    with open(os.path.join(args.out, "history.csv"), "w", encoding="utf-8") as fh:
        fh.write(history_to_csv(result.history))

    best = result.best_val
    _emit(
        {
            "checkpoint": ckpt,
            "history": os.path.join(args.out, "history.csv"),
            "best_epoch": result.best_epoch,
            "stopped_epoch": result.stopped_epoch,
            "val": best.as_dict(),
        }
    )
    return 0


def cmd_eval(args) -> int:
    cfg = _build_config(args, RunConfig)
    records, folds, bags, d_in = _load_fold_data(args, cfg)
    fold = _resolve_fold(folds, args.fold)
    ids = {"train": fold.train_ids, "val": fold.val_ids, "test": fold.test_ids}[args.role]
    if not ids:
        raise ValueError(f"role {args.role!r} of fold {args.fold} is empty")

    model = Model(model_settings(cfg, d_in), cfg.seed)
    load_checkpoint(args.checkpoint, model)
    metrics = evaluate(model, [bags[i] for i in ids], cfg.threshold_rule)
    if args.out:
        _write_effective(cfg, args.out)
    _emit({"role": args.role, "fold": args.fold, **metrics.as_dict()})
    return 0


def cmd_cv(args) -> int:
    cfg = _build_config(args, RunConfig)
    records, folds, bags, d_in = _load_fold_data(args, cfg)

    os.makedirs(args.out, exist_ok=True)
    _write_effective(cfg, args.out)
    if not args.split:
        write_split_file(os.path.join(args.out, "split.tsv"), folds)

    settings = model_settings(cfg, d_in)

    def make_model(fold_index):
        return Model(settings, cfg.seed + fold_index)

    result = cross_validate(bags, folds, make_model, train_config(cfg), jobs=args.jobs)
    fold_rows = []
    for fr in result.folds:
        fold_dir = os.path.join(args.out, f"fold{fr.fold}")
        os.makedirs(fold_dir, exist_ok=True)
        save_checkpoint(
            os.path.join(fold_dir, "checkpoint.bin"), fr.train_result.best_values
        )
        with open(os.path.join(fold_dir, "history.csv"), "w", encoding="utf-8") as fh:
            fh.write(history_to_csv(fr.train_result.history))
        fold_rows.append({"fold": fr.fold, **fr.test_metrics.as_dict()})
    _emit({"folds": fold_rows, "mean": result.mean, "std": result.std})
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _build_config(args, RunConfig)
    seed = cfg.seed
    if args.full:
        reports = run_gradcheck(
            seed=seed, i_vals=(1, 5, 17, 64), d_vals=(8, 16), l_vals=(1, 2, 4),
            inject_bug=args.inject_bug,
        )
    else:
        reports = run_gradcheck(seed=seed, inject_bug=args.inject_bug)
    for r in reports:
        print(r)
    ok = all(r.passed for r in reports)
    _emit(
        {
            "checks": len(reports),
            "failed": sum(not r.passed for r in reports),
            "max_rel_err": max(r.max_rel_err for r in reports),
        }
    )
    return 0 if ok else 2


def cmd_oracle(args) -> int:
    reports = run_all_suites(seed=args.seed)
    for r in reports:
        print(r)
    ok = all(r.passed for r in reports)
    _emit(
        {
            "suites": len(reports),
            "failed": sum(not r.passed for r in reports),
            "max_abs_dev": max(r.max_abs_dev for r in reports),
        }
    )
    return 0 if ok else 2


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="remil", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sp = sub.add_parser("synth", help="generate a synthetic bag dataset")
    sp.add_argument("--config", help="key = value config file")
    sp.add_argument("--out", default="synth_out", help="output directory")
    _add_config_flags(sp, SynthConfig)
    sp.set_defaults(fn=cmd_synth)

    tp = sub.add_parser("train", help="train one fold")
    tp.add_argument("--config")
    tp.add_argument("--out", default="train_out")
    tp.add_argument("--manifest", required=True)
    tp.add_argument("--split", help="existing split file; omit to derive one")
    tp.add_argument("--fold", type=int, default=0)
    tp.add_argument("--k", type=int, default=5, help="folds when deriving a split")
    _add_config_flags(tp, RunConfig)
    tp.set_defaults(fn=cmd_train)

    ep = sub.add_parser("eval", help="evaluate a checkpoint on one split role")
    ep.add_argument("--config")
    ep.add_argument("--out")
    ep.add_argument("--checkpoint", required=True)
    ep.add_argument("--manifest", required=True)
    ep.add_argument("--split", help="split file; omit to derive one")
    ep.add_argument("--fold", type=int, default=0)
    ep.add_argument("--k", type=int, default=5)
    ep.add_argument("--role", choices=("train", "val", "test"), default="test")
    _add_config_flags(ep, RunConfig)
    ep.set_defaults(fn=cmd_eval)

    cp = sub.add_parser("cv", help="k-fold cross-validation")
    cp.add_argument("--config")
    cp.add_argument("--out", default="cv_out")
    cp.add_argument("--manifest", required=True)
    cp.add_argument("--split", help="existing split file; omit to derive one")
    cp.add_argument("--k", type=int, default=5)
    cp.add_argument("--jobs", type=int, default=1)
    _add_config_flags(cp, RunConfig)
    cp.set_defaults(fn=cmd_cv)

    gp = sub.add_parser("gradcheck", help="finite-difference checks on every op family")
    gp.add_argument("--config")
    gp.add_argument("--full", action="store_true", help="run the full shape grid")
    gp.add_argument("--inject-bug", action="store_true", help=argparse.SUPPRESS)
    _add_config_flags(gp, RunConfig)
    gp.set_defaults(fn=cmd_gradcheck)

    op = sub.add_parser("oracle", help="brute-force equivalence suites")
    op.add_argument("--seed", type=int, default=0)
    op.set_defaults(fn=cmd_oracle)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
