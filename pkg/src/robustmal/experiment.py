"""End-to-end comparison of standard and adversarially trained ensembles.

Each repeat draws its own synthetic dataset, holds out a stratified test
split, binarizes everything with medians fit on the training split, trains a
standard ensemble (no adversarial samples, no autoencoders) and a robust
ensemble of the same size, and attacks both on the test split.

Repeat ``r`` of a run with seed ``s`` uses seed ``derive_seed(s, 100, r)``;
within a repeat, splits use key 101 and attacks key 102.
"""

from __future__ import annotations

import dataclasses
import logging
import time

import numpy as np

from .data import Dataset, binarize, fit_binarizer, stratified_split, synth_generate
from .ensemble import build_ensemble, derive_seed
from .evaluation import compute_metrics, robustness_report

logger = logging.getLogger(__name__)


def binary_split(dataset: Dataset, test_fraction, seed):
    """Stratified train/test split binarized with training-split medians."""
    tr, te = stratified_split(dataset.labels, test_fraction, seed)
    thresholds = fit_binarizer(dataset.subset(tr))
    x = binarize(thresholds, dataset)
    binary = Dataset.from_dense(x, dataset.labels, dataset.num_classes)
    return binary.subset(tr), binary.subset(te), thresholds


def _score(ensemble, test, attack, seed):
    x, y = test.dense(), test.labels
    report = robustness_report(ensemble, x, y, attack, seed)
    result = report.pop("result")
    metrics = compute_metrics(np.argmax(ensemble.predict_proba(x), axis=1), y, test.num_classes)
    report["clean_macro_f1"] = metrics.macro_f1
    return report, result


def run_repeat(config, seed, dataset=None) -> dict:
    """Train and attack both ensembles once; returns the per-repeat record and models."""
    started = time.perf_counter()
    if dataset is None:
        dataset = synth_generate(config.synth, seed)
    train, test, thresholds = binary_split(dataset, config.experiment.test_fraction, derive_seed(seed, 101))
    attack_seed = derive_seed(seed, 102)

    standard_cfg = config.ensemble_config(seed, adversarial=False)
    standard_cfg = dataclasses.replace(standard_cfg, dae_member_count=0)
    robust_cfg = config.ensemble_config(seed, adversarial=True)

    record = {"seed": seed, "train_samples": len(train), "test_samples": len(test)}
    models = {}
    for name, ens_cfg in (("standard", standard_cfg), ("robust", robust_cfg)):
        t0 = time.perf_counter()
        ensemble = build_ensemble(train, ens_cfg)
        train_seconds = time.perf_counter() - t0
        report, result = _score(ensemble, test, config.attack, attack_seed)
        report["train_seconds"] = train_seconds
        record[name] = report
        models[name] = (ensemble, result)
        logger.info(
            "seed %d %s: clean %.3f attacked %.3f (%.0fs)",
            seed, name, report["clean_accuracy"], report["attacked_accuracy"], train_seconds,
        )
    record["attacked_accuracy_gain"] = record["robust"]["attacked_accuracy"] - record["standard"]["attacked_accuracy"]
    record["clean_accuracy_drop"] = record["standard"]["clean_accuracy"] - record["robust"]["clean_accuracy"]
    record["seconds"] = time.perf_counter() - started
    return {"record": record, "models": models, "thresholds": thresholds}


def summarize(records) -> dict:
    def mean(path):
        values = []
        for r in records:
            v = r
            for p in path:
                v = v[p]
            values.append(v)
        return float(np.mean(values))

    return {
        "repeats": len(records),
        "standard_clean_accuracy": mean(("standard", "clean_accuracy")),
        "standard_attacked_accuracy": mean(("standard", "attacked_accuracy")),
        "robust_clean_accuracy": mean(("robust", "clean_accuracy")),
        "robust_attacked_accuracy": mean(("robust", "attacked_accuracy")),
        "attacked_accuracy_gain": mean(("attacked_accuracy_gain",)),
        "clean_accuracy_drop": mean(("clean_accuracy_drop",)),
        "standard_mean_loss_after": mean(("standard", "mean_loss_after")),
        "robust_mean_loss_after": mean(("robust", "mean_loss_after")),
        "seconds": float(sum(r["seconds"] for r in records)),
    }


def run_experiment(config, dataset=None) -> dict:
    """Run ``config.experiment.repeats`` repeats; returns the comparison document.

    With ``dataset`` given, every repeat reuses it with a fresh split and
    fresh ensembles instead of drawing synthetic data.
    """
    records = []
    for r in range(config.experiment.repeats):
        seed = derive_seed(config.seed, 100, r)
        records.append(run_repeat(config, seed, dataset)["record"])
    return {"summary": summarize(records), "repeats": records, "config": config.to_dict()}
