"""Random-subspace ensembles with equal-weight probability voting."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, ShapeError
from .tensor_core import PROB_FLOOR, backward, onehot
from .trainer import TrainConfig, TrainedMember, train_member

logger = logging.getLogger(__name__)


def derive_seed(seed, *keys) -> int:
    """Independent 32-bit seed for the stream named by ``keys``."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


@dataclass
class SubspaceMask:
    indices: np.ndarray
    dim: int
    ratio: float

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if len(self.indices) != subspace_size(self.dim, self.ratio):
            raise ContractError("mask size does not match ceil(ratio * dim)")
        if np.any(np.diff(self.indices) <= 0) or self.indices.min() < 0 or self.indices.max() >= self.dim:
            raise ContractError("mask indices must be strictly increasing and inside the dimension")


def subspace_size(d, ratio) -> int:
    return math.ceil(round(ratio * d, 9))


def subspace_mask(d, ratio, seed=None) -> SubspaceMask:
    """``ceil(ratio * d)`` feature indices drawn without replacement, sorted."""
    if d < 1 or not 0 < ratio <= 1:
        raise ContractError(f"need d >= 1 and 0 < ratio <= 1, got d={d}, ratio={ratio}")
    rng = np.random.default_rng(seed)
    indices = np.sort(rng.choice(d, size=subspace_size(d, ratio), replace=False))
    return SubspaceMask(indices, d, ratio)


@dataclass
class EnsembleConfig:
    member_count: int = 10
    dae_member_count: int = 6
    subspace_ratio: float = 0.5
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def validate(self):
        if self.member_count < 1:
            raise ContractError("an ensemble needs at least one member")
        if not 0 <= self.dae_member_count <= self.member_count:
            raise ContractError("dae_member_count must lie in [0, member_count]")
        if not 0 < self.subspace_ratio <= 1:
            raise ContractError("subspace ratio must lie in (0, 1]")


@dataclass
class EnsembleModel:
    members: list
    num_classes: int
    num_features: int
    config: EnsembleConfig | None = None

    def __post_init__(self):
        if not self.members:
            raise ContractError("an ensemble needs at least one member")
        for m in self.members:
            if m.num_classes != self.num_classes or m.source_dim != self.num_features:
                raise ShapeError("members disagree on classes or input dimension")

    @property
    def input_dim(self) -> int:
        return self.num_features

    def predict_proba(self, x):
        return vote_predict(self, x)[1]

    def loss_and_grad(self, x, labels):
        """Cross-entropy of the averaged vote and its input gradient.

        Members use the straight-through relaxation of their binarizers, which
        agrees with ``predict_proba`` on inputs in {0, 1}.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.asarray(labels, dtype=np.int64)
        rows = np.arange(len(y))
        passes = [m.relaxed_output(x) for m in self.members]
        avg = sum(p for p, _, _ in passes) / len(passes)
        p_true = np.maximum(avg[rows, y], PROB_FLOOR)
        grad = np.zeros_like(x)
        for member, (probs, cache, gate) in zip(self.members, passes):
            weight = (probs[rows, y] / p_true / len(passes))[:, None]
            g = backward(member.classifier, cache, weight * (probs - onehot(y, self.num_classes)), param_grads=False)
            grad += member.scatter_input_grad(g.inputs, gate, len(y))
        return -np.log(p_true), grad


def vote_predict(ensemble: EnsembleModel, x):
    """Equal-weight average of member probabilities; ties go to the lowest class."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != ensemble.num_features:
        raise ShapeError(f"input has {x.shape[1]} features, ensemble expects {ensemble.num_features}")
    probs = sum(m.predict_proba(x) for m in ensemble.members) / len(ensemble.members)
    return np.argmax(probs, axis=1), probs


def member_plan(config: EnsembleConfig, num_features):
    """Mask and per-member training config for every member, in order."""
    plan = []
    for i in range(config.member_count):
        mask = subspace_mask(num_features, config.subspace_ratio, derive_seed(config.seed, 1, i))
        train_cfg = replace(
            config.train,
            use_dae=i < config.dae_member_count,
            seed=derive_seed(config.seed, 2, i),
        )
        plan.append((mask, train_cfg))
    return plan


def build_ensemble(dataset, config: EnsembleConfig) -> EnsembleModel:
    """Train ``member_count`` members on their own random subspaces.

    The first ``dae_member_count`` members carry a denoising autoencoder.
    """
    config.validate()
    members = []
    for i, (mask, train_cfg) in enumerate(member_plan(config, dataset.num_features)):
        logger.info("training member %d/%d (dae=%s)", i + 1, config.member_count, train_cfg.use_dae)
        members.append(train_member(dataset, train_cfg, mask.indices))
    return EnsembleModel(members, dataset.num_classes, dataset.num_features, config)
