"""Adversarially robust multiclass malware classification on sparse feature vectors.

Gradient evasion attacks, median binarization, denoising autoencoders,
adversarial training and random-subspace voting ensembles, with evaluation
tooling and a command-line front end.
"""

from .attacks import AttackConfig, PerturbationResult, gradient_attack, transfer_report
from .data import Dataset, NoiseSpec, SynthSpec, class_stats, load_dataset, save_dataset, synth_generate
from .ensemble import EnsembleConfig, EnsembleModel, build_ensemble, vote_predict
from .evaluation import compute_metrics, kfold_cv
from .trainer import TrainConfig, TrainedMember, train_member

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "Dataset",
    "EnsembleConfig",
    "EnsembleModel",
    "NoiseSpec",
    "PerturbationResult",
    "SynthSpec",
    "TrainConfig",
    "TrainedMember",
    "build_ensemble",
    "class_stats",
    "compute_metrics",
    "gradient_attack",
    "kfold_cv",
    "load_dataset",
    "save_dataset",
    "synth_generate",
    "train_member",
    "transfer_report",
    "vote_predict",
]
