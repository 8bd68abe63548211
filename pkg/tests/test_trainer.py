import json
import math

import numpy as np
import pytest

from robustmal.attacks import AttackConfig
from robustmal.data import Dataset, SynthSpec, stratified_split, synth_generate
from robustmal.errors import ContractError
from robustmal.evaluation import robustness_report
from robustmal.experiment import binary_split
from robustmal.modelfile import _member_to_dict
from robustmal.tensor_core import MlpParams, cross_entropy, mlp_forward
from robustmal.trainer import TrainConfig, adversarial_loss, train_member


def lookup_model():
    # one-hot inputs select a row of log-probabilities, so outputs are exact
    table = np.log(np.array([[0.5, 0.5], [0.25, 0.75], [0.25, 0.75], [0.125, 0.875]]))
    return MlpParams([table], [np.zeros(2)])


def small_config(**kw):
    base = dict(epochs=3, batch_size=32, hidden=(16, 16), attack=AttackConfig(iterations=10), seed=5)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def tiny_data():
    return synth_generate(SynthSpec(num_features=40, samples_per_class=20), seed=3)


def test_adversarial_loss_hand_value():
    model = lookup_model()
    eye = np.eye(4)
    loss = adversarial_loss(model, eye[[0, 1]], eye[[2, 3]], [0, 0])
    assert loss == pytest.approx(4 * math.log(2), abs=1e-12)
    assert loss == pytest.approx(2.7726, abs=1e-4)


def test_adversarial_loss_zero_perturbation_and_decomposition(rng):
    model = MlpParams([rng.normal(size=(5, 3))], [rng.normal(size=3)])
    x = rng.random((6, 5))
    y = rng.integers(0, 3, size=6)
    clean = cross_entropy(mlp_forward(model, x)[0], y)
    assert adversarial_loss(model, x, x, y) == pytest.approx(2 * clean, rel=1e-12)
    x_adv = x + 0.1
    adv = cross_entropy(mlp_forward(model, x_adv)[0], y)
    assert adversarial_loss(model, x, x_adv, y) == pytest.approx(clean + adv, rel=1e-12)


def test_training_is_byte_identical_for_equal_seeds(tiny_data):
    a = train_member(tiny_data, small_config(use_dae=True))
    b = train_member(tiny_data, small_config(use_dae=True))
    assert json.dumps(_member_to_dict(a)) == json.dumps(_member_to_dict(b))
    c = train_member(tiny_data, small_config(use_dae=True, seed=6))
    assert json.dumps(_member_to_dict(a)) != json.dumps(_member_to_dict(c))


def test_plain_member_has_no_reconstruction(tiny_data):
    m = train_member(tiny_data, small_config())
    assert m.decoder is None and _member_to_dict(m)["decoder"] is None
    assert len(m.log) == 3
    assert all(e.recon_loss is None and e.adv_loss is not None for e in m.log)


def test_dae_member_logs_reconstruction(tiny_data):
    m = train_member(tiny_data, small_config(use_dae=True, epochs=6))
    assert m.decoder is not None
    losses = [e.recon_loss for e in m.log]
    assert all(v is not None and v >= 0 for v in losses)
    assert losses[-1] < losses[0]
    # the encoder is the classifier's hidden stack
    assert m.dae_params().encoder.weights[0] is m.classifier.weights[0]


def test_adversarial_term_never_below_clean_term(tiny_data):
    m = train_member(tiny_data, small_config(epochs=4))
    assert m.batch_log
    for _, clean, adv in m.batch_log:
        assert adv >= clean - 1e-9


def test_standard_training_logs_no_adversarial_loss(tiny_data):
    m = train_member(tiny_data, small_config(adversarial=False))
    assert all(e.adv_loss is None for e in m.log)


def test_validation_split_records_macro_f1(tiny_data):
    m = train_member(tiny_data, small_config(validation_fraction=0.25, epochs=4))
    scores = [e.val_macro_f1 for e in m.log]
    assert all(s is not None and 0.0 <= s <= 1.0 for s in scores)


def test_mask_restricts_the_member(tiny_data):
    mask = np.arange(0, 40, 2)
    m = train_member(tiny_data, small_config(), mask)
    assert m.classifier.input_dim == 20
    x = tiny_data.dense()
    x_other = x.copy()
    x_other[:, 1::2] = 7.0
    np.testing.assert_array_equal(m.predict_proba(x), m.predict_proba(x_other))


def test_training_rejects_unlabeled_data(tiny_data):
    unlabeled = Dataset(tiny_data.samples, None, tiny_data.num_features, tiny_data.num_classes)
    with pytest.raises(ContractError):
        train_member(unlabeled, small_config())


def test_default_synthetic_data_reaches_high_clean_accuracy():
    ds = synth_generate(SynthSpec(), seed=0)
    tr, te = stratified_split(ds.labels, 0.3, seed=1)
    m = train_member(ds.subset(tr), TrainConfig(use_dae=False, seed=2))
    test = ds.subset(te)
    acc = np.mean(np.argmax(m.predict_proba(test.dense()), axis=1) == test.labels)
    assert acc >= 0.95


def test_robust_member_has_lower_loss_under_attack():
    ds = synth_generate(SynthSpec(), seed=0)
    train, test, _ = binary_split(ds, 0.3, seed=1)
    mask = np.sort(np.random.default_rng(1).choice(200, 100, replace=False))
    attack = AttackConfig()
    scores = {}
    for name, adversarial in (("standard", False), ("robust", True)):
        member = train_member(train, TrainConfig(hidden=(64, 64), adversarial=adversarial, seed=3), mask)
        scores[name] = robustness_report(member, test.dense(), test.labels, attack, seed=0)["mean_loss_after"]
    assert scores["robust"] < 0.5 * scores["standard"]
