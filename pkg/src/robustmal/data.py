"""Datasets, imbalance handling, binarization and salt-and-pepper noise."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import ContractError, DatasetParseError, FeatureIndexError, ShapeError

logger = logging.getLogger(__name__)

UNLABELED = "?"


def _ceil(value):
    # guards against 0.3 * 10 == 3.0000000000000004
    return math.ceil(round(value, 9))


@dataclass
class Dataset:
    """Sparse nonnegative feature counts with optional integer labels."""

    samples: sparse.csr_matrix
    labels: np.ndarray | None
    num_features: int
    num_classes: int

    def __post_init__(self):
        self.samples = sparse.csr_matrix(self.samples, dtype=np.float64)
        if self.samples.shape[1] != self.num_features:
            raise ShapeError(
                f"samples have {self.samples.shape[1]} columns, expected {self.num_features}"
            )
        if self.samples.nnz and self.samples.data.min() < 0:
            raise ContractError("feature counts must be nonnegative")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.samples.shape[0],):
                raise ShapeError("need exactly one label per sample")
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise ContractError(f"labels must lie in [0, {self.num_classes})")

    @classmethod
    def from_dense(cls, x, labels=None, num_classes=None) -> "Dataset":
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if num_classes is None:
            num_classes = int(np.max(labels)) + 1 if labels is not None and len(labels) else 1
        return cls(sparse.csr_matrix(x), labels, x.shape[1], num_classes)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def dense(self) -> np.ndarray:
        return self.samples.toarray()

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        labels = None if self.labels is None else self.labels[rows]
        return Dataset(self.samples[rows], labels, self.num_features, self.num_classes)

    def select_features(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.samples[:, indices], self.labels, len(indices), self.num_classes
        )


def _parse_label(token, line_number):
    if token == UNLABELED:
        return None
    try:
        value = int(token)
    except ValueError:
        raise DatasetParseError(f"bad label {token!r}", line_number) from None
    if value < 0:
        raise DatasetParseError(f"negative label {value}", line_number)
    return value


def _finish(rows, cols, vals, labels, n, num_features, num_classes, line_of_max):
    if num_features is None:
        num_features = max(cols) + 1 if cols else 0
    elif cols:
        worst = int(np.argmax(cols))
        if cols[worst] >= num_features:
            raise FeatureIndexError(cols[worst], num_features, line_of_max[worst])
    present = [v for v in labels if v is not None]
    if present and len(present) != len(labels):
        raise DatasetParseError("file mixes labeled and unlabeled samples")
    if num_classes is None:
        num_classes = max(present) + 1 if present else 1
    matrix = sparse.csr_matrix(
        (np.asarray(vals, dtype=np.float64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(n, num_features),
    )
    return Dataset(matrix, np.asarray(present) if present else None, num_features, num_classes)


def _load_sparse_text(path, num_features, num_classes):
    rows, cols, vals, labels, line_of = [], [], [], [], []
    n = 0
    with open(path) as fh:
        for line_number, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            labels.append(_parse_label(tokens[0], line_number))
            previous = -1
            for token in tokens[1:]:
                idx_text, sep, count_text = token.partition(":")
                if not sep:
                    raise DatasetParseError(f"expected idx:count, got {token!r}", line_number)
                try:
                    idx, count = int(idx_text), float(count_text)
                except ValueError:
                    raise DatasetParseError(f"expected idx:count, got {token!r}", line_number) from None
                if idx < 0 or count < 0 or not math.isfinite(count):
                    raise DatasetParseError(f"bad entry {token!r}", line_number)
                if num_features is not None and idx >= num_features:
                    raise FeatureIndexError(idx, num_features, line_number)
                if idx <= previous:
                    raise DatasetParseError("feature indices must be strictly ascending", line_number)
                previous = idx
                rows.append(n)
                cols.append(idx)
                vals.append(count)
                line_of.append(line_number)
            n += 1
    return _finish(rows, cols, vals, labels, n, num_features, num_classes, line_of)


def _load_dense_csv(path, num_features, num_classes):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError("empty file", 1) from None
        if not header or header[0].strip() != "label":
            raise DatasetParseError("header must start with 'label'", 1)
        width = len(header) - 1
        if num_features is not None and width > num_features:
            raise FeatureIndexError(width - 1, num_features, 1)
        rows, cols, vals, labels = [], [], [], []
        n = 0
        for line_number, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != width + 1:
                raise DatasetParseError(f"expected {width + 1} fields, got {len(record)}", line_number)
            labels.append(_parse_label(record[0].strip(), line_number))
            for j, text in enumerate(record[1:]):
                try:
                    value = float(text)
                except ValueError:
                    raise DatasetParseError(f"bad value {text!r}", line_number) from None
                if value < 0 or not math.isfinite(value):
                    raise DatasetParseError(f"bad value {text!r}", line_number)
                if value:
                    rows.append(n)
                    cols.append(j)
                    vals.append(value)
            n += 1
    return _finish(rows, cols, vals, labels, n, num_features or width, num_classes, [])


def load_dataset(path, format="sparse_text", num_features=None, num_classes=None) -> Dataset:
    """Read a dataset file.

    ``sparse_text`` lines look like ``label idx:count idx:count ...`` with
    0-based ascending indices; ``?`` marks an unlabeled sample. ``dense_csv``
    has a ``label,f0,f1,...`` header. When ``num_features`` is omitted it is
    inferred from the largest index seen.
    """
    path = Path(path)
    if format == "sparse_text":
        return _load_sparse_text(path, num_features, num_classes)
    if format == "dense_csv":
        return _load_dense_csv(path, num_features, num_classes)
    raise ContractError(f"unknown dataset format {format!r}")


def save_dataset(ds: Dataset, path, format="sparse_text"):
    path = Path(path)
    csr = ds.samples.tocsr()
    csr.sort_indices()
    with open(path, "w", newline="") as fh:
        if format == "dense_csv":
            writer = csv.writer(fh)
            writer.writerow(["label"] + [f"f{j}" for j in range(ds.num_features)])
            dense = csr.toarray()
            for i in range(len(ds)):
                label = UNLABELED if ds.labels is None else int(ds.labels[i])
                writer.writerow([label] + [_fmt(v) for v in dense[i]])
            return
        if format != "sparse_text":
            raise ContractError(f"unknown dataset format {format!r}")
        for i in range(len(ds)):
            start, end = csr.indptr[i], csr.indptr[i + 1]
            label = UNLABELED if ds.labels is None else str(int(ds.labels[i]))
            entries = " ".join(
                f"{j}:{_fmt(v)}" for j, v in zip(csr.indices[start:end], csr.data[start:end]) if v
            )
            fh.write(f"{label} {entries}".rstrip() + "\n")


def _fmt(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass
class ClassStats:
    counts: np.ndarray
    max_imbalance_ratio: float
    nonzero_per_sample: np.ndarray
    nonzero_histogram: dict = field(default_factory=dict)
    nonzero_frequency: dict = field(default_factory=dict)
    nonzero_mean: float = 0.0

    def to_dict(self) -> dict:
        return {
            "counts": {str(c): int(n) for c, n in enumerate(self.counts)},
            "max_imbalance_ratio": self.max_imbalance_ratio,
            "nonzero_histogram": {str(k): v for k, v in self.nonzero_histogram.items()},
            "nonzero_frequency": {str(k): v for k, v in self.nonzero_frequency.items()},
            "nonzero_mean": self.nonzero_mean,
        }


def class_stats(ds: Dataset) -> ClassStats:
    """Per-class counts, largest/smallest class ratio and the nonzero-entry histogram."""
    if ds.labels is None:
        raise ContractError("class statistics need a labeled dataset")
    counts = np.bincount(ds.labels, minlength=ds.num_classes)
    nonempty = counts[counts > 0]
    ratio = round(float(nonempty.max() / nonempty.min()), 2) if len(nonempty) else 1.0
    nnz = np.diff(ds.samples.tocsr().indptr)
    hist = dict(sorted(Counter(int(v) for v in nnz).items()))
    total = max(len(nnz), 1)
    return ClassStats(
        counts=counts,
        max_imbalance_ratio=ratio,
        nonzero_per_sample=nnz,
        nonzero_histogram=hist,
        nonzero_frequency={k: v / total for k, v in hist.items()},
        nonzero_mean=float(nnz.mean()) if len(nnz) else 0.0,
    )


def oversample_floor(counts, ratio) -> int:
    return _ceil(ratio * max(counts))


def oversample(ds: Dataset, ratio: float, seed=None) -> Dataset:
    """Replicate random minority-class samples until each class has at least
    ``ceil(ratio * largest class count)`` members.

    The original samples keep their order; duplicates are appended.
    """
    if ds.labels is None:
        raise ContractError("oversampling needs a labeled dataset")
    if not 0 < ratio <= 1:
        raise ContractError(f"oversampling ratio must lie in (0, 1], got {ratio}")
    counts = np.bincount(ds.labels, minlength=ds.num_classes)
    if np.any(counts == 0):
        empty = [int(c) for c in np.flatnonzero(counts == 0)]
        raise ContractError(f"cannot oversample empty classes {empty}")
    floor = oversample_floor(counts, ratio)
    rng = np.random.default_rng(seed)
    extra = []
    for c in range(ds.num_classes):
        if counts[c] < floor:
            members = np.flatnonzero(ds.labels == c)
            extra.append(rng.choice(members, size=floor - counts[c], replace=True))
    if not extra:
        return ds
    rows = np.concatenate([np.arange(len(ds))] + extra)
    return ds.subset(rows)


@dataclass
class BinarizerThresholds:
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 1 or not np.all(np.isfinite(self.theta)):
            raise ContractError("thresholds must be a finite vector")

    def __len__(self):
        return len(self.theta)


def _column_medians(csc, n):
    theta = np.zeros(csc.shape[1])
    lo, hi = (n - 1) // 2, n // 2
    for j in range(csc.shape[1]):
        values = np.sort(csc.data[csc.indptr[j]:csc.indptr[j + 1]])
        zeros = n - len(values)

        def order_stat(k):
            return 0.0 if k < zeros else values[k - zeros]

        theta[j] = 0.5 * (order_stat(lo) + order_stat(hi))
    return theta


def fit_binarizer(ds) -> BinarizerThresholds:
    """Per-feature medians over all samples, zeros included."""
    if isinstance(ds, Dataset):
        n = len(ds)
        if n == 0:
            raise ContractError("cannot fit a binarizer on an empty dataset")
        csc = ds.samples.tocsc()
        if csc.nnz and csc.data.min() < 0:
            raise ContractError("median binarizer expects nonnegative features")
        return BinarizerThresholds(_column_medians(csc, n))
    x = np.atleast_2d(np.asarray(ds, dtype=np.float64))
    if x.shape[0] == 0:
        raise ContractError("cannot fit a binarizer on an empty dataset")
    return BinarizerThresholds(np.median(x, axis=0))


def binarize(thresholds: BinarizerThresholds, samples) -> np.ndarray:
    """1 where a feature strictly exceeds its threshold, else 0."""
    if isinstance(samples, Dataset):
        samples = samples.samples
    if sparse.issparse(samples):
        x = samples.toarray()
    else:
        x = np.asarray(samples, dtype=np.float64)
    if x.shape[-1] != len(thresholds):
        raise ShapeError(f"samples have {x.shape[-1]} features, thresholds have {len(thresholds)}")
    return (x > thresholds.theta).astype(np.float64)


@dataclass
class NoiseSpec:
    alpha: float = 0.05
    lower: float | np.ndarray = 0.0
    upper: float | np.ndarray = 1.0

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ContractError(f"noise fraction must lie in [0, 1], got {self.alpha}")

    def count(self, d) -> int:
        return int(math.floor(self.alpha * d + 0.5))


def salt_pepper(sample, spec: NoiseSpec, seed=None) -> np.ndarray:
    """Set ``round(alpha * d)`` random coordinates of each row to their min or max.

    Coordinates are drawn without replacement; each chosen one becomes the
    per-feature minimum or maximum with probability 1/2.
    """
    x = np.array(sample, dtype=np.float64)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    n, d = x.shape
    k = spec.count(d)
    if k == 0:
        return x[0] if squeeze else x
    rng = np.random.default_rng(seed)
    order = np.argsort(rng.random((n, d)), axis=1, kind="stable")[:, :k]
    coin = rng.random((n, k)) < 0.5
    lower = np.broadcast_to(np.asarray(spec.lower, dtype=np.float64), (d,))
    upper = np.broadcast_to(np.asarray(spec.upper, dtype=np.float64), (d,))
    rows = np.repeat(np.arange(n), k).reshape(n, k)
    x[rows, order] = np.where(coin, upper[order], lower[order])
    return x[0] if squeeze else x


@dataclass
class SynthSpec:
    num_classes: int = 5
    num_features: int = 200
    samples_per_class: int = 100
    sparsity: float = 0.05
    class_signal_strength: float = 0.5
    max_count: int = 4


def signature_block_size(spec: SynthSpec) -> int:
    return spec.num_features // (2 * spec.num_classes)


def synth_generate(spec: SynthSpec, seed=None) -> Dataset:
    """Sparse count data with one disjoint signature block per class.

    Every feature fires with probability ``sparsity``; a class's own
    signature features fire with probability
    ``sparsity + class_signal_strength * (1 - sparsity)``. The remaining
    features are shared background. Nonzero counts are uniform on
    ``1..max_count``. At zero signal strength all classes share one
    distribution.
    """
    for name in ("num_classes", "num_features", "samples_per_class", "max_count"):
        if getattr(spec, name) <= 0:
            raise ContractError(f"{name} must be positive")
    if not 0 < spec.sparsity < 1:
        raise ContractError("sparsity must lie in (0, 1)")
    if not 0 <= spec.class_signal_strength <= 1:
        raise ContractError("class_signal_strength must lie in [0, 1]")
    block = signature_block_size(spec)
    if block < 1:
        raise ContractError(
            f"{spec.num_features} features cannot hold signature blocks for {spec.num_classes} classes"
        )
    rng = np.random.default_rng(seed)
    # signature blocks sit at random feature positions so subspaces see every class
    layout = rng.permutation(spec.num_features)
    n = spec.num_classes * spec.samples_per_class
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    prob = np.full((n, spec.num_features), spec.sparsity)
    boosted = spec.sparsity + spec.class_signal_strength * (1 - spec.sparsity)
    for c in range(spec.num_classes):
        cols = layout[c * block:(c + 1) * block]
        prob[np.ix_(labels == c, cols)] = boosted
    fires = rng.random((n, spec.num_features)) < prob
    counts = rng.integers(1, spec.max_count + 1, size=(n, spec.num_features))
    x = np.where(fires, counts, 0).astype(np.float64)
    order = rng.permutation(n)
    return Dataset(sparse.csr_matrix(x[order]), labels[order], spec.num_features, spec.num_classes)


def stratified_split(labels, test_fraction, seed=None):
    """Per-class shuffled split into ``(train_rows, test_rows)``."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        rows = rng.permutation(np.flatnonzero(labels == c))
        k = int(round(test_fraction * len(rows)))
        test.append(rows[:k])
        train.append(rows[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))
