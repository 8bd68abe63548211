"""Run configuration: one JSON document covering data, training, attacks and ensembles.

Every section maps onto a dataclass, so the accepted keys and their defaults
are exactly that dataclass's fields. Unknown keys are rejected with the
dotted path of the offending key.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .attacks import AttackConfig
from .data import NoiseSpec, SynthSpec
from .ensemble import EnsembleConfig
from .errors import ConfigError, ContractError
from .trainer import TrainConfig


@dataclass
class DataPaths:
    train: str | None = None
    test: str | None = None
    format: str = "sparse_text"


@dataclass
class EnsembleSection:
    member_count: int = 10
    dae_member_count: int = 6
    subspace_ratio: float = 0.5


@dataclass
class ExperimentSection:
    repeats: int = 3
    test_fraction: float = 0.3


@dataclass
class TrainSection:
    epochs: int = 50
    batch_size: int = 128
    restarts: int = 3
    classifier_lr: float = 0.001
    dae_lr: float = 0.001
    oversample_ratio: float | None = 0.30
    hidden: tuple = (160, 160)
    activation: str = "elu"
    validation_fraction: float = 0.0
    adversarial: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "out"
    data: DataPaths = field(default_factory=DataPaths)
    synth: SynthSpec = field(default_factory=SynthSpec)
    train: TrainSection = field(default_factory=TrainSection)
    attack: AttackConfig = field(default_factory=AttackConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def train_config(self, seed=None, **overrides) -> TrainConfig:
        t = self.train
        cfg = TrainConfig(
            epochs=t.epochs,
            batch_size=t.batch_size,
            restarts=t.restarts,
            attack=dataclasses.replace(self.attack),
            noise=dataclasses.replace(self.noise),
            adversarial=t.adversarial,
            classifier_lr=t.classifier_lr,
            dae_lr=t.dae_lr,
            oversample_ratio=t.oversample_ratio,
            hidden=tuple(t.hidden),
            activation=t.activation,
            validation_fraction=t.validation_fraction,
            seed=self.seed if seed is None else seed,
        )
        return dataclasses.replace(cfg, **overrides)

    def ensemble_config(self, seed=None, **train_overrides) -> EnsembleConfig:
        seed = self.seed if seed is None else seed
        e = self.ensemble
        return EnsembleConfig(
            member_count=e.member_count,
            dae_member_count=e.dae_member_count,
            subspace_ratio=e.subspace_ratio,
            train=self.train_config(seed, **train_overrides),
            seed=seed,
        )

    def to_dict(self) -> dict:
        return to_jsonable(dataclasses.asdict(self))


def to_jsonable(value):
    """Convert numpy values and tuples into plain JSON types."""
    if isinstance(value, dict):
        return {k: to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def _build(cls, raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object", path)
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        dotted = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"unknown config key {dotted!r}", dotted)
        default = known[key].default
        if default is dataclasses.MISSING and known[key].default_factory is not dataclasses.MISSING:
            default = known[key].default_factory()
        if dataclasses.is_dataclass(default):
            value = _build(type(default), value, dotted)
        elif isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (ContractError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path or 'config'}: {exc}", path) from exc


def config_from_dict(raw) -> RunConfig:
    cfg = _build(RunConfig, raw, "")
    try:
        cfg.attack.validate()
        cfg.train_config().validate()
        cfg.ensemble_config().validate()
    except ContractError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return config_from_dict(raw)


def merge(base: RunConfig, overrides: dict) -> RunConfig:
    """Apply dotted-key overrides (``{"train.epochs": 5}``) on top of ``base``."""
    raw = base.to_dict()
    for dotted, value in overrides.items():
        node = raw
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    return config_from_dict(raw)
