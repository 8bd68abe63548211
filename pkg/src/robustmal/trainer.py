"""Per-member training: oversampling, binarization, adversarial training and
block-coordinate updates of the denoising autoencoder and the classifier."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackConfig, check_feasible, gradient_attack
from .dae import DaeParams, dae_update
from .data import BinarizerThresholds, Dataset, NoiseSpec, binarize, fit_binarizer, oversample, salt_pepper, stratified_split
from .errors import ContractError, ShapeError
from .evaluation import compute_metrics
from .tensor_core import (
    PROB_FLOOR,
    AdamState,
    MlpClassifier,
    MlpParams,
    adam_step,
    backward,
    cross_entropy,
    init_mlp,
    mlp_forward,
    onehot,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    restarts: int = 3
    attack: AttackConfig = field(default_factory=AttackConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    use_dae: bool = False
    adversarial: bool = True
    classifier_lr: float = 0.001
    dae_lr: float = 0.001
    oversample_ratio: float | None = 0.30
    hidden: tuple = (160, 160)
    activation: str = "elu"
    validation_fraction: float = 0.0
    seed: int = 0

    def validate(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.restarts <= 0:
            raise ContractError("epochs, batch size and restarts must be positive")
        if self.classifier_lr <= 0 or self.dae_lr <= 0:
            raise ContractError("learning rates must be positive")
        if not self.hidden or any(h <= 0 for h in self.hidden):
            raise ContractError("hidden layer widths must be positive")
        if not 0 <= self.validation_fraction < 1:
            raise ContractError("validation fraction must lie in [0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    clean_loss: float
    adv_loss: float | None
    recon_loss: float | None
    val_macro_f1: float | None

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "clean_loss": self.clean_loss,
            "adv_loss": self.adv_loss,
            "recon_loss": self.recon_loss,
            "val_macro_f1": self.val_macro_f1,
        }


@dataclass
class TrainedMember:
    """One ensemble member: feature mask, binarizer, classifier and optional decoder.

    ``classifier`` reads the member's binarized subspace view. With a decoder,
    its hidden layers double as the autoencoder's encoder.
    """

    classifier: MlpParams
    decoder: MlpParams | None
    thresholds: BinarizerThresholds
    mask: np.ndarray
    source_dim: int
    log: list = field(default_factory=list)
    seed: int = 0
    batch_log: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.int64)
        if len(self.mask) != len(self.thresholds) or len(self.mask) != self.classifier.input_dim:
            raise ShapeError("mask, thresholds and classifier input width disagree")

    @property
    def num_classes(self) -> int:
        return self.classifier.output_dim

    @property
    def input_dim(self) -> int:
        return self.source_dim

    @property
    def has_dae(self) -> bool:
        return self.decoder is not None

    def _subspace(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.source_dim:
            raise ShapeError(f"input has {x.shape[1]} features, member expects {self.source_dim}")
        return x[:, self.mask]

    def view(self, x):
        """Mask then binarize with this member's thresholds."""
        return binarize(self.thresholds, self._subspace(x))

    def predict_proba(self, x):
        return mlp_forward(self.classifier, self.view(x))[0]

    def dae_params(self) -> DaeParams:
        if self.decoder is None:
            raise ContractError("member has no autoencoder")
        return _dae_view(self.classifier, self.decoder)

    def relaxed_output(self, x):
        """Forward pass on the straight-through relaxation of the binarizer.

        On inputs in [0, 1] a feature with threshold below 1 passes through
        unchanged (at 0/1 this equals binarization); other features are
        constant 0.
        """
        gate = (self.thresholds.theta < 1.0).astype(np.float64)
        probs, cache = mlp_forward(self.classifier, self._subspace(x) * gate)
        return probs, cache, gate

    def scatter_input_grad(self, grad_view, gate, n):
        full = np.zeros((n, self.source_dim))
        full[:, self.mask] = grad_view * gate
        return full

    def loss_and_grad(self, x, labels):
        probs, cache, gate = self.relaxed_output(x)
        y = np.asarray(labels, dtype=np.int64)
        losses = -np.log(np.maximum(probs[np.arange(len(y)), y], PROB_FLOOR))
        g = backward(self.classifier, cache, probs - onehot(y, probs.shape[1]), param_grads=False)
        return losses, self.scatter_input_grad(g.inputs, gate, len(y))


def _dae_view(classifier: MlpParams, decoder: MlpParams) -> DaeParams:
    encoder = MlpParams(classifier.weights[:-1], classifier.biases[:-1], classifier.activation, "hidden")
    return DaeParams(encoder, decoder)


def _merge_encoder(classifier: MlpParams, dae: DaeParams) -> MlpParams:
    return MlpParams(
        dae.encoder.weights + [classifier.weights[-1]],
        dae.encoder.biases + [classifier.biases[-1]],
        classifier.activation,
        classifier.output,
    )


def adversarial_loss(model: MlpParams, clean_batch, adversarial_batch, labels) -> float:
    """Mean over the batch of ``L(F(x + delta), y) + L(F(x), y)``."""
    clean = np.atleast_2d(clean_batch)
    adv = np.atleast_2d(adversarial_batch)
    if clean.shape != adv.shape:
        raise ShapeError(f"clean batch {clean.shape} and adversarial batch {adv.shape} differ")
    return cross_entropy(mlp_forward(model, adv)[0], labels) + cross_entropy(mlp_forward(model, clean)[0], labels)


def _classifier_step(params, state, clean, adv, labels):
    """One Adam step on the classification objective; returns losses of both terms."""
    n = len(labels)
    batch = clean if adv is None else np.vstack([clean, adv])
    y = labels if adv is None else np.concatenate([labels, labels])
    probs, cache = mlp_forward(params, batch)
    p_true = np.maximum(probs[np.arange(len(y)), y], PROB_FLOOR)
    losses = -np.log(p_true)
    grads = backward(params, cache, (probs - onehot(y, probs.shape[1])) / n)
    arrays, state = adam_step(state, params.arrays(), grads.arrays())
    clean_loss = float(losses[:n].mean())
    adv_loss = None if adv is None else float(losses[n:].mean())
    return params.with_arrays(arrays), state, clean_loss, adv_loss


def _macro_f1(classifier, x, y, num_classes):
    pred = np.argmax(mlp_forward(classifier, x)[0], axis=1)
    return compute_metrics(pred, y, num_classes).macro_f1


def train_member(dataset: Dataset, config: TrainConfig, mask=None) -> TrainedMember:
    """Train one classifier on the feature subset ``mask`` (all features by default).

    Per mini-batch: ``restarts`` attacks from salt-and-pepper starting points
    with the best perturbation kept, then (with ``use_dae``) one
    autoencoder step on the noised and adversarial reconstructions, then one
    classifier step on the clean-plus-adversarial loss.
    """
    config.validate()
    if dataset.labels is None:
        raise ContractError("training needs a labeled dataset")
    rng = np.random.default_rng(config.seed)
    mask = np.arange(dataset.num_features) if mask is None else np.asarray(mask, dtype=np.int64)
    o = dataset.num_classes

    val = None
    train_ds = dataset
    if config.validation_fraction > 0:
        tr_rows, val_rows = stratified_split(dataset.labels, config.validation_fraction, rng)
        train_ds, val = dataset.subset(tr_rows), dataset.subset(val_rows)
    if config.oversample_ratio is not None:
        train_ds = oversample(train_ds, config.oversample_ratio, rng)
    if len(train_ds) < config.batch_size and len(train_ds) < 2:
        raise ContractError("dataset too small for a single mini-batch")

    view_ds = train_ds.select_features(mask)
    thresholds = fit_binarizer(view_ds)
    x_all = binarize(thresholds, view_ds)
    y_all = train_ds.labels
    x_val = None if val is None else binarize(thresholds, val.select_features(mask))

    m = len(mask)
    classifier = init_mlp([m, *config.hidden, o], config.activation, "softmax", rng)
    decoder = None
    cls_state = AdamState.zeros_like(classifier.arrays(), learning_rate=config.classifier_lr)
    if config.use_dae:
        decoder = init_mlp([*config.hidden[::-1], m], config.activation, "sigmoid", rng)
        dae_state = AdamState.zeros_like(_dae_view(classifier, decoder).arrays(), learning_rate=config.dae_lr)
    attack_cfg = replace(config.attack, restarts=config.restarts)
    noise = replace(config.noise)

    log, batch_log = [], []
    best = None
    for epoch in range(config.epochs):
        order = rng.permutation(len(x_all))
        clean_sum = adv_sum = recon_sum = 0.0
        seen = 0
        for start in range(0, len(order), config.batch_size):
            rows = order[start:start + config.batch_size]
            xb, yb = x_all[rows], y_all[rows]
            adv = None
            if config.adversarial:
                result = gradient_attack(MlpClassifier(classifier), xb, yb, attack_cfg, rng)
                adv = result.adversarial_sample
                check_feasible(adv, xb, attack_cfg)
            if decoder is not None:
                corrupted = [salt_pepper(xb, noise, rng)]
                if adv is not None:
                    corrupted.append(adv)
                dae, dae_state, recon = dae_update(_dae_view(classifier, decoder), dae_state, xb, corrupted)
                classifier, decoder = _merge_encoder(classifier, dae), dae.decoder
                recon_sum += recon * len(rows)
            classifier, cls_state, clean_loss, adv_loss = _classifier_step(classifier, cls_state, xb, adv, yb)
            batch_log.append((epoch, clean_loss, adv_loss))
            clean_sum += clean_loss * len(rows)
            if adv_loss is not None:
                adv_sum += adv_loss * len(rows)
            seen += len(rows)
        f1 = None if x_val is None else _macro_f1(classifier, x_val, val.labels, o)
        log.append(
            EpochRecord(
                epoch,
                clean_sum / seen,
                adv_sum / seen if config.adversarial else None,
                recon_sum / seen if decoder is not None else None,
                f1,
            )
        )
        logger.debug("epoch %d clean %.4f", epoch, clean_sum / seen)
        if f1 is not None and (best is None or f1 > best[0]):
            best = (f1, classifier, decoder)
    if best is not None:
        _, classifier, decoder = best
    return TrainedMember(classifier, decoder, thresholds, mask, dataset.num_features, log, config.seed, batch_log)
