import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from robustmal.data import (
    BinarizerThresholds,
    Dataset,
    NoiseSpec,
    SynthSpec,
    binarize,
    class_stats,
    fit_binarizer,
    load_dataset,
    oversample,
    oversample_floor,
    salt_pepper,
    save_dataset,
    signature_block_size,
    stratified_split,
    synth_generate,
)
from robustmal.errors import ContractError, DatasetParseError, FeatureIndexError

PAPER_COUNTS = {0: 8678, 1: 1883, 2: 771, 3: 692, 4: 512}


def counts_dataset(counts):
    labels = np.concatenate([np.full(n, c) for c, n in counts.items()])
    return Dataset(sparse.csr_matrix((len(labels), 3)), labels, 3, len(counts))


def write(tmp_path, text, name="d.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_sparse_line_parses(tmp_path):
    ds = load_dataset(write(tmp_path, "2 5:1 17:3\n"), num_features=20)
    row = ds.dense()[0]
    assert ds.labels.tolist() == [2]
    assert row[5] == 1 and row[17] == 3 and np.count_nonzero(row) == 2


def test_empty_feature_list_is_zero_sample(tmp_path):
    ds = load_dataset(write(tmp_path, "0 \n"), num_features=4)
    assert ds.labels.tolist() == [0]
    assert not ds.dense().any()


def test_out_of_bounds_index_is_named(tmp_path):
    with pytest.raises(FeatureIndexError, match="25") as info:
        load_dataset(write(tmp_path, "0 1:1\n1 25:1\n"), num_features=20)
    assert info.value.line_number == 2


@pytest.mark.parametrize(
    "line", ["1 3:1 2:1", "x 1:1", "1 4", "1 2:-1", "1 a:2"],
)
def test_malformed_lines_report_line_number(tmp_path, line):
    with pytest.raises(DatasetParseError, match="line 2"):
        load_dataset(write(tmp_path, "0 1:1\n" + line + "\n"), num_features=10)


def test_unlabeled_and_round_trip(tmp_path):
    p = write(tmp_path, "# comment\n? 0:2 3:1\n? 1:4\n")
    ds = load_dataset(p, num_features=5, num_classes=3)
    assert ds.labels is None and len(ds) == 2
    out = tmp_path / "again.txt"
    save_dataset(ds, out)
    again = load_dataset(out, num_features=5, num_classes=3)
    np.testing.assert_array_equal(again.dense(), ds.dense())


def test_dense_csv_round_trip(tmp_path):
    ds = Dataset.from_dense([[0, 1.5, 0], [2, 0, 0]], [1, 0], 2)
    p = tmp_path / "d.csv"
    save_dataset(ds, p, "dense_csv")
    assert p.read_text().splitlines()[0] == "label,f0,f1,f2"
    again = load_dataset(p, "dense_csv")
    np.testing.assert_array_equal(again.dense(), ds.dense())
    np.testing.assert_array_equal(again.labels, [1, 0])


def test_paper_class_counts_ratio():
    st_ = class_stats(counts_dataset(PAPER_COUNTS))
    assert st_.max_imbalance_ratio == 16.95
    assert st_.counts.tolist() == list(PAPER_COUNTS.values())


def test_single_class_ratio_is_one():
    assert class_stats(counts_dataset({0: 7})).max_imbalance_ratio == 1.0


def test_nonzero_histogram():
    x = np.zeros((3, 6))
    x[0, :3] = 1
    x[2, :5] = 2
    st_ = class_stats(Dataset.from_dense(x, [0, 0, 0], 1))
    assert st_.nonzero_histogram == {0: 1, 3: 1, 5: 1}
    assert st_.nonzero_mean == pytest.approx(8 / 3)
    assert sum(st_.nonzero_frequency.values()) == pytest.approx(1.0)


def test_oversample_floor_on_paper_counts():
    assert oversample_floor(list(PAPER_COUNTS.values()), 0.30) == 2604 == math.ceil(0.3 * 8678)
    out = oversample(counts_dataset(PAPER_COUNTS), 0.30, seed=0)
    counts = np.bincount(out.labels)
    assert counts.min() >= 2604
    assert counts[0] == 8678


def test_oversample_noop_when_balanced():
    ds = counts_dataset({0: 10, 1: 9})
    assert oversample(ds, 0.5, seed=0) is ds


def test_oversample_duplicates_originals():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 5, size=(12, 4)).astype(float)
    labels = np.array([0] * 10 + [1] * 2)
    ds = Dataset.from_dense(x, labels, 2)
    out = oversample(ds, 0.5, seed=1)
    assert np.bincount(out.labels).tolist() == [10, 5]
    dense = out.dense()
    np.testing.assert_array_equal(dense[:12], x)
    originals = {tuple(r) for r in x[labels == 1]}
    for row, lab in zip(dense[12:], out.labels[12:]):
        assert lab == 1 and tuple(row) in originals


def test_oversample_rejects_empty_class():
    ds = Dataset.from_dense(np.zeros((3, 2)), [0, 0, 2], 3)
    with pytest.raises(ContractError):
        oversample(ds, 0.5)


@pytest.mark.parametrize(
    "column,theta", [([0, 0, 1, 3, 5], 1.0), ([0, 0, 0], 0.0), ([2, 4], 3.0)],
)
def test_median_thresholds(column, theta):
    x = np.array(column, dtype=float)[:, None]
    assert fit_binarizer(Dataset.from_dense(x, None)).theta.tolist() == [theta]
    assert fit_binarizer(x).theta.tolist() == [theta]


def test_strict_binarization():
    out = binarize(BinarizerThresholds([1.0]), np.array([[0], [0], [1], [3], [5]], dtype=float))
    assert out[:, 0].tolist() == [0, 0, 0, 1, 1]
    assert not binarize(BinarizerThresholds([0.0, 2.0]), np.zeros((1, 2))).any()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_binarize_is_idempotent_on_binary_data(seed):
    rng = np.random.default_rng(seed)
    x = (rng.random((8, 6)) < rng.random(6)).astype(float)
    th = fit_binarizer(x)
    assert set(np.unique(th.theta)) <= {0.0, 0.5, 1.0}
    once = binarize(th, x)
    inner = fit_binarizer(once)
    mask = inner.theta < 1
    np.testing.assert_array_equal(binarize(inner, once)[:, mask], once[:, mask])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_binarize_only_changes_straddling_coordinates(seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 4, size=(2, 10)).astype(float)
    th = BinarizerThresholds(rng.integers(0, 3, size=10).astype(float))
    b = binarize(th, x)
    assert set(np.unique(b)) <= {0.0, 1.0}
    straddle = (x[0] > th.theta) != (x[1] > th.theta)
    np.testing.assert_array_equal(b[0] != b[1], straddle)


def test_salt_pepper_alpha_zero_is_identity():
    x = np.random.default_rng(0).random(30)
    np.testing.assert_array_equal(salt_pepper(x, NoiseSpec(alpha=0.0), seed=1), x)


def test_salt_pepper_full_selection_on_binary():
    x = (np.random.default_rng(2).random(40) < 0.5).astype(float)
    out = salt_pepper(x, NoiseSpec(alpha=1.0), seed=3)
    assert set(np.unique(out)) <= {0.0, 1.0}


def test_salt_pepper_exact_count():
    spec = NoiseSpec(alpha=0.05)
    assert spec.count(100) == 5
    x = np.full(100, 0.5)
    out = salt_pepper(x, spec, seed=4)
    # mid-range inputs make every selected coordinate visible
    assert np.count_nonzero(out != x) == 5
    assert set(out[out != x]) <= {0.0, 1.0}
    binary = (np.random.default_rng(5).random(100) < 0.5).astype(float)
    assert np.count_nonzero(salt_pepper(binary, spec, seed=6) != binary) <= 5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 1), st.integers(1, 60))
def test_salt_pepper_changes_at_most_k(seed, alpha, d):
    spec = NoiseSpec(alpha=alpha)
    x = np.random.default_rng(seed).random((3, d))
    out = salt_pepper(x, spec, seed=seed)
    assert np.all(np.count_nonzero(out != x, axis=1) <= spec.count(d))
    np.testing.assert_array_equal(out, salt_pepper(x, spec, seed=seed))


def test_synth_cardinality_and_determinism():
    spec = SynthSpec()
    ds = synth_generate(spec, seed=1)
    assert len(ds) == 500 and ds.num_features == 200
    assert np.bincount(ds.labels).tolist() == [100] * 5
    assert class_stats(ds).counts.tolist() == [100] * 5
    again = synth_generate(spec, seed=1)
    assert (ds.samples != again.samples).nnz == 0
    np.testing.assert_array_equal(ds.labels, again.labels)


def test_synth_sparse_relative_to_dimension():
    st_ = class_stats(synth_generate(SynthSpec(), seed=0))
    assert st_.nonzero_mean < 0.25 * 200


def test_synth_null_signal_has_identical_class_distributions():
    spec = SynthSpec(class_signal_strength=0.0, samples_per_class=2000)
    ds = synth_generate(spec, seed=3)
    x = ds.dense() > 0
    rates = np.array([x[ds.labels == c].mean(axis=0) for c in range(5)])
    # every class fires every feature at the background rate
    assert np.abs(rates - spec.sparsity).max() < 0.03


def test_synth_rejects_too_many_classes():
    with pytest.raises(ContractError):
        synth_generate(SynthSpec(num_classes=30, num_features=40))
    assert signature_block_size(SynthSpec()) == 20


def test_stratified_split_preserves_proportions():
    labels = np.repeat(np.arange(3), [50, 30, 20])
    tr, te = stratified_split(labels, 0.3, seed=0)
    assert len(np.intersect1d(tr, te)) == 0 and len(tr) + len(te) == 100
    assert np.bincount(labels[te]).tolist() == [15, 9, 6]
