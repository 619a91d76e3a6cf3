"""Data selection and evaluation that need no circuit simulation.

Everything here is safe to import in a build without the quantum module.
"""
from __future__ import annotations

import numpy as np

from .config import ConfigError, ExperimentConfig
from .data import Dataset, load_named, subset, synthetic
from .models import TargetModel, accuracy, cross_entropy, forward, get_spec


def n_classes(cfg: ExperimentConfig) -> int:
    if cfg.dataset != "synthetic":
        return 10
    if cfg.synthetic_classes:
        return cfg.synthetic_classes
    if cfg.method == "qcml":
        return 4
    return get_spec(cfg.architecture).n_outputs


def load_data(cfg: ExperimentConfig, root=None) -> tuple[Dataset, Dataset]:
    """Train/test splits for a config, with stratified subsets when requested."""
    if cfg.dataset == "synthetic":
        shape = get_spec(cfg.architecture).input_shape
        if shape[0] != 1 or shape[1] != shape[2]:
            raise ConfigError("dataset: synthetic data is square single-channel")
        k = n_classes(cfg)
        return (synthetic(cfg.synthetic_train, k, cfg.seed, shape[1]),
                synthetic(cfg.synthetic_test, k, cfg.seed + 1, shape[1], split="test"))
    train = load_named(cfg.dataset, "train", root)
    test = load_named(cfg.dataset, "test", root)
    if cfg.subset:
        train = subset(train, cfg.subset, cfg.seed)
    if cfg.test_subset:
        test = subset(test, cfg.test_subset, cfg.seed)
    return train, test


def loss_acc(logits: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return cross_entropy(logits, labels), accuracy(logits, labels)


def evaluate_model(model: TargetModel, dataset: Dataset) -> tuple[float, float]:
    """Mean cross-entropy and argmax accuracy of a classical model, chunked."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return loss_acc(forward(model, dataset.images), dataset.labels)
