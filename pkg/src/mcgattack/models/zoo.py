"""Small trainable classifiers used as surrogates and as black-box targets."""

from __future__ import annotations

import copy
import logging

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError, DataError, ShapeError
from ..serialization import load_container, save_container
from .data import ImageDataset

logger = logging.getLogger(__name__)

ARCHITECTURES = ("arch_a", "arch_b", "linear")


class Classifier(nn.Module):
    """A classifier whose parameterised layers form an ordered list of groups.

    ``forward`` returns logits; :func:`surrogate_scores` turns them into
    probabilities.  Each entry of ``self.layers`` is one freezable group.
    """

    arch_id = "base"

    def __init__(self, input_shape, num_classes: int):
        super().__init__()
        self.input_shape = tuple(int(s) for s in input_shape)
        self.num_classes = int(num_classes)
        self.test_error = None
        self.seed = None
        self.classes = None

    def layer_groups(self) -> list:
        return [(f"layers.{i}", m) for i, m in enumerate(self.layers)]


class ArchA(Classifier):
    """Four 3x3 conv layers followed by one linear head."""

    arch_id = "arch_a"

    def __init__(self, input_shape, num_classes, width: int = 16):
        super().__init__(input_shape, num_classes)
        c = self.input_shape[0]
        self.layers = nn.ModuleList(
            [
                nn.Conv2d(c, width, 3, padding=1),
                nn.Conv2d(width, 2 * width, 3, padding=1),
                nn.Conv2d(2 * width, 2 * width, 3, padding=1),
                nn.Conv2d(2 * width, 4 * width, 3, padding=1),
                nn.Linear(4 * width * 16, num_classes),
            ]
        )

    def forward(self, x):
        c1, c2, c3, c4, fc = self.layers
        h = F.relu(c1(x))
        h = F.max_pool2d(F.relu(c2(h)), 2)
        h = F.relu(c3(h))
        h = F.relu(c4(h))
        h = F.adaptive_avg_pool2d(h, 4)
        return fc(h.flatten(1))


class ArchB(Classifier):
    """Two 5x5 conv layers followed by a two-layer MLP head."""

    arch_id = "arch_b"

    def __init__(self, input_shape, num_classes, width: int = 16, hidden: int = 64):
        super().__init__(input_shape, num_classes)
        c = self.input_shape[0]
        self.layers = nn.ModuleList(
            [
                nn.Conv2d(c, width, 5, padding=2),
                nn.Conv2d(width, 2 * width, 5, padding=2),
                nn.Linear(2 * width * 16, hidden),
                nn.Linear(hidden, num_classes),
            ]
        )

    def forward(self, x):
        c1, c2, fc1, fc2 = self.layers
        h = F.max_pool2d(F.relu(c1(x)), 2)
        h = F.max_pool2d(F.relu(c2(h)), 2)
        h = F.adaptive_avg_pool2d(h, 4)
        return fc2(F.relu(fc1(h.flatten(1))))


class LinearClassifier(Classifier):
    arch_id = "linear"

    def __init__(self, input_shape, num_classes):
        super().__init__(input_shape, num_classes)
        d = 1
        for s in self.input_shape:
            d *= s
        self.layers = nn.ModuleList([nn.Linear(d, num_classes)])

    def forward(self, x):
        return self.layers[0](x.flatten(1))


_BUILDERS = {"arch_a": ArchA, "arch_b": ArchB, "linear": LinearClassifier}


def build_classifier(arch: str, input_shape, num_classes: int, seed: int = 0) -> Classifier:
    if arch not in _BUILDERS:
        raise ConfigError(f"unknown architecture {arch!r}; choose from {ARCHITECTURES}")
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = _BUILDERS[arch](input_shape, num_classes)
    model.seed = seed
    return model


@torch.no_grad()
def evaluate_error(model: Classifier, images: torch.Tensor, labels: torch.Tensor, batch_size: int = 256) -> float:
    model.eval()
    wrong = 0
    for i in range(0, len(images), batch_size):
        pred = model(images[i : i + batch_size]).argmax(1)
        wrong += int((pred != labels[i : i + batch_size]).sum())
    return wrong / max(len(images), 1)


def train_classifier(
    dataset: ImageDataset,
    arch: str,
    epochs: int = 5,
    seed: int = 0,
    lr: float = 1e-3,
    batch_size: int = 64,
) -> Classifier:
    """Train ``arch`` on the train split with Adam; records held-out test error.

    Deterministic for a fixed ``seed`` (initialisation and batch order).
    """
    if len(dataset.train_x) == 0 or len(dataset.test_x) == 0:
        raise DataError("cannot train on an empty dataset")
    if dataset.num_classes < 2:
        raise DataError("need at least two classes")
    model = build_classifier(arch, dataset.image_shape, dataset.num_classes, seed)
    model.classes = tuple(dataset.classes)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(seed)
    n = len(dataset.train_x)
    for epoch in range(epochs):
        model.train()
        order = torch.randperm(n, generator=gen)
        total = 0.0
        for i in range(0, n, batch_size):
            idx = order[i : i + batch_size]
            loss = F.cross_entropy(model(dataset.train_x[idx]), dataset.train_y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        logger.info("%s epoch %d loss %.4f", arch, epoch, total / n)
    model.test_error = evaluate_error(model, dataset.test_x, dataset.test_y)
    model.eval()
    return model


def _check_input(model: Classifier, x: torch.Tensor) -> None:
    if tuple(x.shape[-3:]) != model.input_shape or x.ndim not in (3, 4):
        raise ShapeError(f"input shape {tuple(x.shape)} does not match model input {model.input_shape}")


def surrogate_logits(model: Classifier, x: torch.Tensor) -> torch.Tensor:
    _check_input(model, x)
    if x.ndim == 3:
        return model(x.unsqueeze(0)).squeeze(0)
    return model(x)


def surrogate_scores(model: Classifier, x: torch.Tensor) -> torch.Tensor:
    """Differentiable class-probability vector(s) of the surrogate."""
    return F.softmax(surrogate_logits(model, x), dim=-1)


def surrogate_log_scores(model: Classifier, x: torch.Tensor) -> torch.Tensor:
    return F.log_softmax(surrogate_logits(model, x), dim=-1)


def freeze_except_last(model: Classifier, n_groups: int) -> Classifier:
    """Leave only the last ``n_groups`` layer groups trainable (in place)."""
    groups = model.layer_groups()
    if n_groups <= 0:
        raise ConfigError("n_groups must be positive")
    if n_groups > len(groups):
        raise ConfigError(f"model has only {len(groups)} layer groups")
    cut = len(groups) - n_groups
    for i, (_, module) in enumerate(groups):
        for p in module.parameters():
            p.requires_grad_(i >= cut)
    return model


def trainable_groups(model: Classifier) -> list:
    return [name for name, m in model.layer_groups() if all(p.requires_grad for p in m.parameters())]


def clone_model(model: Classifier) -> Classifier:
    return copy.deepcopy(model)


def save_classifier(model: Classifier, path) -> None:
    meta = {
        "architecture": model.arch_id,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "classes": list(model.classes) if model.classes else None,
        "seed": model.seed,
        "test_error": model.test_error,
    }
    save_container(path, model.state_dict(), meta)


def load_classifier(path) -> Classifier:
    arrays, meta = load_container(path)
    model = build_classifier(meta["architecture"], meta["input_shape"], meta["num_classes"], meta.get("seed") or 0)
    model.load_state_dict(arrays)
    model.classes = tuple(meta["classes"]) if meta.get("classes") else None
    model.test_error = meta.get("test_error")
    model.eval()
    return model
