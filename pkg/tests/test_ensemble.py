import itertools
import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import central_difference, relative_error
from robustmal.attacks import AttackConfig
from robustmal.data import SynthSpec, synth_generate
from robustmal.ensemble import (
    EnsembleConfig,
    EnsembleModel,
    build_ensemble,
    derive_seed,
    subspace_mask,
    vote_predict,
)
from robustmal.errors import ContractError, ShapeError
from robustmal.modelfile import ModelBundle, _member_to_dict, dumps_model
from robustmal.trainer import TrainConfig, train_member


class FixedMember:
    """Returns the same probability row for every input."""

    def __init__(self, probs, dim=3):
        self.probs = np.asarray(probs, dtype=float)
        self.num_classes = len(self.probs)
        self.source_dim = dim

    def predict_proba(self, x):
        return np.tile(self.probs, (len(np.atleast_2d(x)), 1))


def fixed_ensemble(rows, dim=3):
    return EnsembleModel([FixedMember(r, dim) for r in rows], len(rows[0]), dim)


def small_train(**kw):
    base = dict(epochs=2, batch_size=32, hidden=(12,), attack=AttackConfig(iterations=5))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def tiny_data():
    return synth_generate(SynthSpec(num_features=30, samples_per_class=12), seed=4)


def test_full_subspace_is_every_index():
    assert subspace_mask(10, 1.0, seed=3).indices.tolist() == list(range(10))


def test_half_subspace_cardinality():
    m = subspace_mask(10, 0.5, seed=0)
    assert len(m.indices) == len(set(m.indices.tolist())) == 5
    assert m.indices.min() >= 0 and m.indices.max() < 10
    small = subspace_mask(4, 0.5, seed=7).indices
    assert len(set(small.tolist())) == 2 and small.max() < 4
    np.testing.assert_array_equal(small, subspace_mask(4, 0.5, seed=7).indices)
    assert len(subspace_mask(7, 0.5, seed=0).indices) == 4


def test_subspace_rejects_bad_arguments():
    for d, ratio in ((0, 0.5), (5, 0.0), (5, 1.5)):
        with pytest.raises(ContractError):
            subspace_mask(d, ratio)


def test_derived_masks_are_distinct():
    masks = {tuple(subspace_mask(64, 0.5, derive_seed(0, 1, i)).indices) for i in range(100)}
    assert len(masks) == 100


def test_vote_averages_member_probabilities():
    label, probs = vote_predict(fixed_ensemble([[0.8, 0.2], [0.4, 0.6]]), np.zeros((1, 3)))
    np.testing.assert_allclose(probs[0], [0.6, 0.4], atol=1e-15)
    assert label.tolist() == [0]


def test_uniform_tie_goes_to_lowest_class():
    label, probs = vote_predict(fixed_ensemble([[0.2] * 5] * 3), np.zeros((2, 3)))
    np.testing.assert_allclose(probs, 0.2)
    assert label.tolist() == [0, 0]


def test_vote_checks_dimension():
    with pytest.raises(ShapeError):
        vote_predict(fixed_ensemble([[0.5, 0.5]]), np.zeros((1, 4)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_vote_is_a_distribution_and_order_free(n, classes, seed):
    rng = np.random.default_rng(seed)
    rows = rng.dirichlet(np.ones(classes), size=n)
    x = np.zeros((1, 3))
    label, probs = vote_predict(fixed_ensemble(list(rows)), x)
    assert abs(probs.sum() - 1.0) < 1e-9 and np.all(probs >= 0)
    for perm in itertools.islice(itertools.permutations(range(n)), 6):
        l2, p2 = vote_predict(fixed_ensemble([rows[i] for i in perm]), x)
        assert l2.tolist() == label.tolist()
        np.testing.assert_allclose(p2, probs, rtol=0, atol=1e-15)


def test_single_full_member_matches_plain_member(tiny_data):
    cfg = EnsembleConfig(member_count=1, dae_member_count=0, subspace_ratio=1.0, train=small_train(), seed=9)
    ens = build_ensemble(tiny_data, cfg)
    direct = train_member(tiny_data, replace(cfg.train, seed=derive_seed(9, 2, 0)), np.arange(30))
    assert json.dumps(_member_to_dict(ens.members[0])) == json.dumps(_member_to_dict(direct))
    x = tiny_data.dense()
    np.testing.assert_array_equal(ens.predict_proba(x), direct.predict_proba(x))


def test_dae_member_count_is_respected(tiny_data):
    cfg = EnsembleConfig(member_count=10, dae_member_count=6, train=small_train(epochs=1), seed=1)
    ens = build_ensemble(tiny_data, cfg)
    decoders = [_member_to_dict(m)["decoder"] is not None for m in ens.members]
    assert decoders == [True] * 6 + [False] * 4
    assert all(len(m.mask) == 15 for m in ens.members)


def test_builds_are_byte_identical(tiny_data):
    cfg = EnsembleConfig(member_count=3, dae_member_count=1, train=small_train(), seed=2)
    a, b = build_ensemble(tiny_data, cfg), build_ensemble(tiny_data, cfg)
    for ma, mb in zip(a.members, b.members):
        np.testing.assert_array_equal(ma.mask, mb.mask)
    assert dumps_model(ModelBundle(a)) == dumps_model(ModelBundle(b))
    other = build_ensemble(tiny_data, replace(cfg, seed=3))
    assert dumps_model(ModelBundle(other)) != dumps_model(ModelBundle(a))


def test_invalid_ensemble_configs(tiny_data):
    for kw in ({"member_count": 0}, {"member_count": 2, "dae_member_count": 3}, {"subspace_ratio": 0.0}):
        with pytest.raises(ContractError):
            build_ensemble(tiny_data, EnsembleConfig(train=small_train(), **kw))


def test_ensemble_gradient_matches_finite_differences(tiny_data, rng):
    cfg = EnsembleConfig(member_count=3, dae_member_count=0, train=small_train(adversarial=False), seed=5)
    ens = build_ensemble(tiny_data, cfg)
    x = rng.random((4, 30))
    y = np.array([0, 1, 2, 3])
    _, grad = ens.loss_and_grad(x, y)
    for i in range(4):
        numeric = central_difference(lambda v: float(ens.loss_and_grad(v[None, :], y[i:i + 1])[0][0]), x[i])
        assert relative_error(grad[i], numeric) < 1e-4


def test_relaxed_loss_agrees_with_vote_on_binary_inputs(tiny_data, rng):
    cfg = EnsembleConfig(member_count=2, dae_member_count=1, train=small_train(), seed=6)
    ens = build_ensemble(tiny_data, cfg)
    x = (rng.random((5, 30)) < 0.3).astype(float)
    y = rng.integers(0, 5, size=5)
    losses, _ = ens.loss_and_grad(x, y)
    probs = ens.predict_proba(x)
    np.testing.assert_allclose(losses, -np.log(probs[np.arange(5), y]), rtol=1e-12)
