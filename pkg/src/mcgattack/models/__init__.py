"""Surrogate and target classifiers, oracles, defenses and datasets."""

from .data import ImageDataset, load_dataset, make_shapes
from .oracle import (
    DefenseWrapper,
    RemoteBackend,
    RequestMapping,
    ScoreMapping,
    TargetOracle,
    apply_defense,
    local_oracle,
    oracle_query,
    remote_oracle,
)
from .zoo import (
    Classifier,
    build_classifier,
    freeze_except_last,
    load_classifier,
    save_classifier,
    surrogate_log_scores,
    surrogate_scores,
    train_classifier,
)

__all__ = [
    "Classifier",
    "DefenseWrapper",
    "ImageDataset",
    "RemoteBackend",
    "RequestMapping",
    "ScoreMapping",
    "TargetOracle",
    "apply_defense",
    "build_classifier",
    "freeze_except_last",
    "load_classifier",
    "load_dataset",
    "local_oracle",
    "make_shapes",
    "oracle_query",
    "remote_oracle",
    "save_classifier",
    "surrogate_log_scores",
    "surrogate_scores",
    "train_classifier",
]
