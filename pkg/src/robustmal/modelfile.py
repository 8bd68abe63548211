"""JSON model files and atomic output writes.

A model file holds the run configuration, optional input thresholds applied
before the ensemble sees a sample, and every member's mask, binarizer
thresholds and layers. Weights are flat row-major float lists next to their
shapes. Floats are written with ``repr`` precision, so a load reproduces the
saved arrays bit for bit.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import BinarizerThresholds, binarize
from .ensemble import EnsembleModel
from .errors import ModelFormatError
from .tensor_core import MlpParams
from .trainer import EpochRecord, TrainedMember

SCHEMA_VERSION = 1


def atomic_write(path, text: str):
    """Write ``text`` to a temporary file in the target directory, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class ModelBundle:
    """An ensemble plus the preprocessing the command line applies in front of it."""

    ensemble: EnsembleModel
    input_thresholds: BinarizerThresholds | None = None
    config: dict | None = None

    def prepare(self, x):
        """Dense model inputs from raw feature rows."""
        if self.input_thresholds is None:
            return np.atleast_2d(np.asarray(x, dtype=np.float64))
        return binarize(self.input_thresholds, x)


def _mlp_to_dict(params: MlpParams) -> dict:
    return {
        "activation": params.activation,
        "output": params.output,
        "layers": [
            {"shape": list(w.shape), "weights": w.ravel().tolist(), "bias": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }


def _mlp_from_dict(raw) -> MlpParams:
    weights, biases = [], []
    for layer in raw["layers"]:
        shape = tuple(layer["shape"])
        w = np.asarray(layer["weights"], dtype=np.float64)
        if w.size != shape[0] * shape[1]:
            raise ModelFormatError(f"layer weights hold {w.size} values, shape says {shape}")
        weights.append(w.reshape(shape))
        biases.append(np.asarray(layer["bias"], dtype=np.float64))
    return MlpParams(weights, biases, raw["activation"], raw["output"])


def _member_to_dict(m: TrainedMember) -> dict:
    return {
        "seed": int(m.seed),
        "mask": m.mask.tolist(),
        "thresholds": m.thresholds.theta.tolist(),
        "classifier": _mlp_to_dict(m.classifier),
        "decoder": None if m.decoder is None else _mlp_to_dict(m.decoder),
        "log": [e.to_dict() for e in m.log],
    }


def _member_from_dict(raw, source_dim) -> TrainedMember:
    return TrainedMember(
        classifier=_mlp_from_dict(raw["classifier"]),
        decoder=None if raw["decoder"] is None else _mlp_from_dict(raw["decoder"]),
        thresholds=BinarizerThresholds(np.asarray(raw["thresholds"], dtype=np.float64)),
        mask=np.asarray(raw["mask"], dtype=np.int64),
        source_dim=source_dim,
        log=[EpochRecord(**e) for e in raw.get("log", [])],
        seed=raw["seed"],
    )


def model_to_dict(bundle: ModelBundle) -> dict:
    ens = bundle.ensemble
    return {
        "schema_version": SCHEMA_VERSION,
        "config": bundle.config,
        "num_classes": ens.num_classes,
        "num_features": ens.num_features,
        "input_thresholds": None if bundle.input_thresholds is None else bundle.input_thresholds.theta.tolist(),
        "members": [_member_to_dict(m) for m in ens.members],
    }


def model_from_dict(raw) -> ModelBundle:
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ModelFormatError(f"unsupported model schema version {version!r}")
    try:
        d = int(raw["num_features"])
        members = [_member_from_dict(m, d) for m in raw["members"]]
        ens = EnsembleModel(members, int(raw["num_classes"]), d)
        th = raw.get("input_thresholds")
        thresholds = None if th is None else BinarizerThresholds(np.asarray(th, dtype=np.float64))
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from exc
    return ModelBundle(ens, thresholds, raw.get("config"))


def dumps_model(bundle: ModelBundle) -> str:
    return json.dumps(model_to_dict(bundle), allow_nan=False)


def save_model(bundle: ModelBundle, path):
    atomic_write(path, dumps_model(bundle))


def load_model(path) -> ModelBundle:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(raw)
