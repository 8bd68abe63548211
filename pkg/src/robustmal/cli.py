"""Command-line interface.

Every subcommand accepts ``--config`` (a run configuration JSON file),
``--seed`` and ``--out``; ``--set section.key=value`` overrides single
configuration values. Exit status is 0 on success, 2 for usage and
configuration errors and 1 for missing or unreadable inputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from ._runtime import tune_allocator
from .attacks import AttackConfig, check_feasible, gradient_attack, transfer_report
from .config import RunConfig, load_config, merge, to_jsonable
from .data import Dataset, binarize, class_stats, fit_binarizer, load_dataset, save_dataset, synth_generate
from .ensemble import build_ensemble
from .errors import ConfigError, ContractError, DatasetParseError, ModelFormatError, ShapeError
from .evaluation import compute_metrics, kfold_cv
from .experiment import run_experiment
from .modelfile import ModelBundle, atomic_write, load_model, save_model

logger = logging.getLogger("robustmal")

SUBCOMMANDS = ("synth-data", "stats", "train", "attack", "predict", "evaluate", "analyze-transfer", "experiment")
LOG_COLUMNS = ("epoch", "clean_loss", "adv_loss", "recon_loss", "val_macro_f1")


class UsageError(Exception):
    """Bad arguments; exits with status 2."""


class InputError(Exception):
    """Missing or unreadable input; exits with status 1."""


def _parse_set(items):
    overrides = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        try:
            overrides[key] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key] = value
    return overrides


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"file not found: {p}")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(_existing(args.config)) if args.config else RunConfig()
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    for key in overrides:
        section, _, leaf = key.partition(".")
        if not hasattr(cfg, section) or (leaf and not hasattr(getattr(cfg, section), leaf)):
            raise ConfigError(f"unknown config key {key!r}", key)
    return merge(cfg, overrides) if overrides else cfg


def _out_dir(cfg) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, doc):
    atomic_write(path, json.dumps(to_jsonable(doc), indent=2) + "\n")


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write(path, buf.getvalue())


def _load_data(path, cfg, num_features=None, num_classes=None) -> Dataset:
    if path is None:
        raise UsageError("no dataset given; pass --data or set data.train in the config")
    return load_dataset(_existing(path), cfg.data.format, num_features, num_classes)


def _is_binary(ds: Dataset) -> bool:
    return ds.samples.nnz == 0 or bool(np.all(ds.samples.data == 1.0))


def _cell(v):
    return "" if v is None else repr(v) if isinstance(v, float) else v


# ---------------------------------------------------------------- subcommands

def cmd_synth_data(args, cfg):
    spec = cfg.synth
    for flag, name in (("classes", "num_classes"), ("features", "num_features"), ("per_class", "samples_per_class"),
                       ("sparsity", "sparsity"), ("signal_strength", "class_signal_strength")):
        value = getattr(args, flag)
        if value is not None:
            setattr(spec, name, value)
    ds = synth_generate(spec, cfg.seed)
    out = _out_dir(cfg)
    path = out / "synth.txt"
    save_dataset(ds, path)
    meta = {"seed": cfg.seed, "spec": spec.__dict__, "samples": len(ds), "class_counts": np.bincount(ds.labels).tolist()}
    _write_json(out / "synth.meta.json", meta)
    print(f"wrote {len(ds)} samples to {path}")
    return 0


def cmd_stats(args, cfg):
    ds = _load_data(args.data or cfg.data.train, cfg)
    st = class_stats(ds)
    for c, n in enumerate(st.counts):
        print(f"class {c}: {int(n)}")
    print(f"max imbalance ratio: {st.max_imbalance_ratio:.2f}")
    print(f"mean nonzero entries per sample: {st.nonzero_mean:.2f}")
    if args.out is not None:
        _write_json(_out_dir(cfg) / "stats.json", st.to_dict())
    return 0


def _train_bundle(train_ds, cfg, standard):
    thresholds = None
    if not _is_binary(train_ds):
        thresholds = fit_binarizer(train_ds)
        train_ds = Dataset.from_dense(binarize(thresholds, train_ds), train_ds.labels, train_ds.num_classes)
    ens_cfg = cfg.ensemble_config(adversarial=False) if standard else cfg.ensemble_config()
    if standard:
        ens_cfg.dae_member_count = 0
    ensemble = build_ensemble(train_ds, ens_cfg)
    # the output location is not part of the model, so reruns elsewhere stay byte-identical
    saved = cfg.to_dict()
    saved.pop("output_dir")
    return ModelBundle(ensemble, thresholds, saved)


def cmd_train(args, cfg):
    overrides = {}
    if args.members is not None:
        overrides["ensemble.member_count"] = args.members
    if args.dae_members is not None:
        overrides["ensemble.dae_member_count"] = args.dae_members
    if args.epochs is not None:
        overrides["train.epochs"] = args.epochs
    if overrides:
        cfg = merge(cfg, overrides)
    ds = _load_data(args.data or cfg.data.train, cfg)
    if ds.labels is None:
        raise UsageError("training needs a labeled dataset")
    t0 = time.perf_counter()
    bundle = _train_bundle(ds, cfg, args.standard)
    out = _out_dir(cfg)
    save_model(bundle, out / "model.json")
    for i, member in enumerate(bundle.ensemble.members):
        rows = [[_cell(e.to_dict()[c]) for c in LOG_COLUMNS] for e in member.log]
        _write_csv(out / f"training_log_member{i}.csv", LOG_COLUMNS, rows)
    print(f"trained {len(bundle.ensemble.members)} members in {time.perf_counter() - t0:.1f}s; model at {out / 'model.json'}")
    return 0


def _model_and_data(args, cfg, model_path=None):
    bundle = load_model(_existing(model_path or args.model))
    ens = bundle.ensemble
    ds = _load_data(args.data or cfg.data.test, cfg, ens.num_features, ens.num_classes)
    return bundle, ds


def _attack_config(args, cfg) -> AttackConfig:
    atk = cfg.attack
    for flag in ("norm", "epsilon", "iterations", "restarts"):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(atk, flag, value)
    if getattr(args, "insertion_only", False):
        atk.insertion_only = True
    try:
        atk.validate()
    except ContractError as exc:
        raise ConfigError(f"invalid attack config: {exc}") from exc
    return atk


def _labels_for(bundle, ds, x):
    if ds.labels is not None:
        return ds.labels
    return np.argmax(bundle.ensemble.predict_proba(x), axis=1)


def cmd_attack(args, cfg):
    bundle, ds = _model_and_data(args, cfg)
    x = bundle.prepare(ds.dense())
    y = _labels_for(bundle, ds, x)
    rows = np.arange(len(y)) if args.target_class is None else np.flatnonzero(y == args.target_class)
    atk = _attack_config(args, cfg)
    result = gradient_attack(bundle.ensemble, x[rows], y[rows], atk, cfg.seed)
    check_feasible(result.adversarial_sample, x[rows], atk)
    d = result.delta
    table = zip(
        rows.tolist(),
        result.loss_before.tolist(),
        result.loss_after.tolist(),
        result.evaded.astype(int).tolist(),
        np.count_nonzero(d, axis=1).tolist(),
        np.linalg.norm(d, axis=1).tolist(),
        (np.abs(d).max(axis=1) if d.size else np.zeros(len(rows))).tolist(),
    )
    out = _out_dir(cfg)
    _write_csv(out / "attack.csv", ("sample_index", "loss_before", "loss_after", "evaded", "l0", "l2", "linf"), table)
    adv_ds = Dataset.from_dense(result.adversarial_sample, y[rows], bundle.ensemble.num_classes)
    save_dataset(adv_ds, out / "adversarial.txt")
    summary = {
        "samples": int(len(rows)),
        "evasion_rate": float(np.mean(result.evaded)) if len(rows) else 0.0,
        "mean_loss_before": float(np.mean(result.loss_before)) if len(rows) else 0.0,
        "mean_loss_after": float(np.mean(result.loss_after)) if len(rows) else 0.0,
        "attack": atk.__dict__,
    }
    _write_json(out / "attack_summary.json", summary)
    print(f"attacked {summary['samples']} samples; evasion rate {summary['evasion_rate']:.3f}")
    return 0


def cmd_predict(args, cfg):
    bundle, ds = _model_and_data(args, cfg)
    probs = bundle.ensemble.predict_proba(bundle.prepare(ds.dense()))
    pred = np.argmax(probs, axis=1)
    o = bundle.ensemble.num_classes
    header = ["sample_index", "predicted_label"] + [f"p{c}" for c in range(o)]
    rows = ([i, int(p)] + [repr(float(v)) for v in pr] for i, (p, pr) in enumerate(zip(pred, probs)))
    out = _out_dir(cfg)
    _write_csv(out / "predictions.csv", header, rows)
    counts = np.bincount(pred, minlength=o)
    _write_json(out / "prediction_summary.json", {"samples": int(len(pred)), "counts": {str(c): int(n) for c, n in enumerate(counts)}})
    print("predicted label counts: " + ", ".join(f"{c}: {int(n)}" for c, n in enumerate(counts)))
    return 0


def _metrics_table(metrics) -> str:
    lines = [f"{'class':>5}  {'precision':>9}  {'recall':>6}  {'f1':>6}"]
    for c, (p, r, f) in enumerate(zip(metrics.precision, metrics.recall, metrics.f1)):
        lines.append(f"{c:>5}  {p:>9.4f}  {r:>6.4f}  {f:>6.4f}")
    lines.append(f"accuracy {metrics.accuracy:.4f}  macro-F1 {metrics.macro_f1:.4f}")
    return "\n".join(lines)


class _BundlePredictor:
    def __init__(self, bundle):
        self.bundle = bundle

    def predict(self, x):
        return np.argmax(self.bundle.ensemble.predict_proba(self.bundle.prepare(x)), axis=1)


def cmd_evaluate(args, cfg):
    out = _out_dir(cfg)
    if args.cv:
        ds = _load_data(args.data or cfg.data.train, cfg)
        if ds.labels is None:
            raise UsageError("cross-validation needs a labeled dataset")
        report = kfold_cv(ds, args.cv, lambda train_ds: _BundlePredictor(_train_bundle(train_ds, cfg, args.standard)), cfg.seed)
        _write_json(out / "cv.json", report.to_dict())
        for i, m in enumerate(report.folds):
            print(f"fold {i}: accuracy {m.accuracy:.4f}  macro-F1 {m.macro_f1:.4f}")
        s = report.summary()
        print(f"accuracy {s['accuracy']}  macro-F1 {s['macro_f1']}")
        return 0
    if args.model is None:
        raise UsageError("evaluate needs --model (or --cv K to cross-validate)")
    bundle, ds = _model_and_data(args, cfg)
    if ds.labels is None:
        raise UsageError("evaluation needs a labeled dataset")
    x = bundle.prepare(ds.dense())
    pred = np.argmax(bundle.ensemble.predict_proba(x), axis=1)
    metrics = compute_metrics(pred, ds.labels, bundle.ensemble.num_classes)
    doc = {"clean": metrics.to_dict()}
    print(_metrics_table(metrics))
    if args.attacked:
        atk = _attack_config(args, cfg)
        result = gradient_attack(bundle.ensemble, x, ds.labels, atk, cfg.seed)
        check_feasible(result.adversarial_sample, x, atk)
        adv_pred = np.argmax(bundle.ensemble.predict_proba(result.adversarial_sample), axis=1)
        attacked = compute_metrics(adv_pred, ds.labels, bundle.ensemble.num_classes)
        doc["attacked"] = attacked.to_dict()
        print("under attack:")
        print(_metrics_table(attacked))
    _write_json(out / "evaluation.json", doc)
    return 0


def cmd_analyze_transfer(args, cfg):
    surrogate = load_model(_existing(args.surrogate))
    bundle, ds = _model_and_data(args, cfg, args.target)
    atk = _attack_config(args, cfg)
    if atk.budget is None:
        raise ConfigError("transfer analysis needs attack.norm and attack.epsilon", "attack.epsilon")
    x = bundle.prepare(ds.dense())
    y = _labels_for(bundle, ds, x)
    report = transfer_report(surrogate.ensemble, bundle.ensemble, x, y, atk, cfg.seed, args.segments)
    check_feasible(x + report.entries.delta, x, atk)
    doc = report.to_dict()
    _write_json(_out_dir(cfg) / "transfer.json", doc)
    print(
        f"mean white-box loss increase {doc['mean_white_box_loss_increase']:.4f}; "
        f"mean gray-box loss increase {doc['mean_gray_box_loss_increase']:.4f}; "
        f"bound violations {doc['bound_violations']}"
    )
    return 0


def cmd_experiment(args, cfg):
    if args.repeats is not None:
        cfg = merge(cfg, {"experiment.repeats": args.repeats})
    dataset = None
    if args.data or cfg.data.train:
        dataset = _load_data(args.data or cfg.data.train, cfg)
    doc = run_experiment(cfg, dataset)
    _write_json(_out_dir(cfg) / "experiment.json", doc)
    s = doc["summary"]
    print(f"{'':>9}  {'clean':>6}  {'attacked':>8}")
    for name in ("standard", "robust"):
        print(f"{name:>9}  {s[name + '_clean_accuracy']:>6.3f}  {s[name + '_attacked_accuracy']:>8.3f}")
    print(f"attacked accuracy gain {s['attacked_accuracy_gain']:+.3f}; clean accuracy drop {s['clean_accuracy_drop']:+.3f}; {s['seconds']:.0f}s")
    return 0


# ---------------------------------------------------------------- parser

def _common(p):
    p.add_argument("--config", help="run configuration JSON file")
    p.add_argument("--seed", type=int, help="global seed (all randomness derives from it)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config value, e.g. train.epochs=5")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _attack_flags(p):
    p.add_argument("--norm", choices=("l0", "l2", "linf"))
    p.add_argument("--epsilon", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--insertion-only", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustmal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("synth-data", help="generate a synthetic sparse-count dataset")
    _common(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--features", type=int)
    p.add_argument("--per-class", type=int)
    p.add_argument("--sparsity", type=float)
    p.add_argument("--signal-strength", type=float)

    p = sub.add_parser("stats", help="class counts, imbalance ratio and sparsity")
    _common(p)
    p.add_argument("--data")

    p = sub.add_parser("train", help="train an ensemble")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--standard", action="store_true", help="no adversarial training and no autoencoders")
    p.add_argument("--members", type=int)
    p.add_argument("--dae-members", type=int)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("attack", help="craft adversarial samples against a model")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p.add_argument("--class", dest="target_class", type=int, help="attack only samples of this class")
    _attack_flags(p)

    p = sub.add_parser("predict", help="label a dataset")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data")

    p = sub.add_parser("evaluate", help="metrics on a labeled dataset, or k-fold cross-validation")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--attacked", action="store_true", help="also score adversarial samples")
    p.add_argument("--cv", type=int, metavar="K", help="cross-validate freshly trained ensembles")
    p.add_argument("--standard", action="store_true", help="with --cv: train standard ensembles")
    _attack_flags(p)

    p = sub.add_parser("analyze-transfer", help="gray-box transfer from a surrogate model")
    _common(p)
    p.add_argument("--surrogate", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--data")
    p.add_argument("--segments", type=int, default=20, help="gradient samples along each perturbation")
    _attack_flags(p)

    p = sub.add_parser("experiment", help="standard vs robust ensemble comparison")
    _common(p)
    p.add_argument("--data", help="use this dataset instead of synthetic data")
    p.add_argument("--repeats", type=int)
    return parser


COMMANDS = {
    "synth-data": cmd_synth_data,
    "stats": cmd_stats,
    "train": cmd_train,
    "attack": cmd_attack,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "analyze-transfer": cmd_analyze_transfer,
    "experiment": cmd_experiment,
}


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DatasetParseError, ModelFormatError, ContractError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    tune_allocator()
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
