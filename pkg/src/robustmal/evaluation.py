"""Classification metrics, stratified k-fold cross-validation and robustness reports."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from sklearn.model_selection import KFold, StratifiedKFold

from .errors import ContractError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class Metrics:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "confusion": self.confusion.tolist(),
        }


def _safe_ratio(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def compute_metrics(predictions, labels, num_classes) -> Metrics:
    """Confusion matrix (rows = true class) and per-class scores; 0/0 counts as 0."""
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ShapeError(f"{pred.shape} predictions for {true.shape} labels")
    for name, values in (("predictions", pred), ("labels", true)):
        if len(values) and (values.min() < 0 or values.max() >= num_classes):
            raise ContractError(f"{name} must lie in [0, {num_classes})")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (true, pred), 1)
    tp = np.diag(confusion).astype(np.float64)
    precision = _safe_ratio(tp, confusion.sum(axis=0).astype(np.float64))
    recall = _safe_ratio(tp, confusion.sum(axis=1).astype(np.float64))
    f1 = _safe_ratio(2 * precision * recall, precision + recall)
    accuracy = float(tp.sum() / len(true)) if len(true) else 0.0
    return Metrics(accuracy, precision, recall, f1, float(f1.mean()), confusion)


def t_interval(scores, confidence=0.95):
    """Mean and Student-t half-width with ``k - 1`` degrees of freedom."""
    scores = np.asarray(scores, dtype=np.float64)
    k = len(scores)
    if k < 2:
        raise ContractError("a confidence interval needs at least two scores")
    mean = float(scores.mean())
    spread = float(scores.std(ddof=1))
    return mean, float(stats.t.ppf(0.5 + confidence / 2, k - 1) * spread / np.sqrt(k))


def format_interval(mean, half_width, percent=True) -> str:
    scale = 100.0 if percent else 1.0
    return f"{mean * scale:.2f}±{half_width * scale:.2f}"


@dataclass
class CvReport:
    folds: list
    accuracy: tuple
    macro_f1: tuple
    warnings: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "k": len(self.folds),
            "accuracy": format_interval(*self.accuracy),
            "macro_f1": format_interval(*self.macro_f1),
        }

    def to_dict(self) -> dict:
        return {
            "folds": [m.to_dict() for m in self.folds],
            "accuracy_mean": self.accuracy[0],
            "accuracy_half_width": self.accuracy[1],
            "macro_f1_mean": self.macro_f1[0],
            "macro_f1_half_width": self.macro_f1[1],
            "summary": self.summary(),
            "warnings": list(self.warnings),
        }


def fold_indices(labels, k, seed=None):
    """Shuffled stratified folds; plain k-fold (with a warning) if some class has fewer than k samples."""
    labels = np.asarray(labels)
    notes = []
    counts = np.bincount(labels)
    if np.any((counts > 0) & (counts < k)):
        notes.append(f"a class has fewer than {k} samples; using non-stratified folds")
        splitter = KFold(n_splits=k, shuffle=True, random_state=seed)
    else:
        splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        folds = list(splitter.split(np.zeros(len(labels)), labels))
    return folds, notes


def kfold_cv(dataset, k, trainer, seed=None) -> CvReport:
    """Train ``trainer(train_ds)`` on each split and score the held-out fold.

    ``trainer`` returns an object with ``predict(x) -> labels`` where ``x`` is
    the dense held-out feature matrix.
    """
    if k < 2:
        raise ContractError("k-fold cross-validation needs k >= 2")
    if dataset.labels is None:
        raise ContractError("cross-validation needs a labeled dataset")
    if len(dataset) < k:
        raise ContractError(f"{len(dataset)} samples cannot fill {k} folds")
    folds, notes = fold_indices(dataset.labels, k, seed)
    for note in notes:
        logger.warning(note)
    results = []
    for train_rows, test_rows in folds:
        model = trainer(dataset.subset(train_rows))
        held = dataset.subset(test_rows)
        pred = model.predict(held.dense())
        results.append(compute_metrics(pred, held.labels, dataset.num_classes))
    acc = t_interval([m.accuracy for m in results])
    f1 = t_interval([m.macro_f1 for m in results])
    return CvReport(results, acc, f1, notes)


def robustness_report(model, x, y, attack_config, seed=None) -> dict:
    """Clean and attacked accuracy of ``model`` under one gradient attack."""
    from .attacks import feasibility_violations, gradient_attack

    y = np.asarray(y, dtype=np.int64)
    clean_pred = np.argmax(model.predict_proba(x), axis=1)
    result = gradient_attack(model, x, y, attack_config, seed)
    adv_pred = np.argmax(model.predict_proba(result.adversarial_sample), axis=1)
    return {
        "clean_accuracy": float(np.mean(clean_pred == y)),
        "attacked_accuracy": float(np.mean(adv_pred == y)),
        "evasion_rate": float(np.mean(result.evaded)),
        "mean_loss_before": float(np.mean(result.loss_before)),
        "mean_loss_after": float(np.mean(result.loss_after)),
        "mean_flips": float(np.mean(np.count_nonzero(result.delta, axis=1))),
        "infeasible": len(feasibility_violations(result.adversarial_sample, x, attack_config)),
        "result": result,
    }
