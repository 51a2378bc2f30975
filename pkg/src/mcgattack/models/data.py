"""Datasets: a hermetic procedural shapes set plus CIFAR-10 / MNIST binary loaders."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..errors import DataError

SHAPE_NAMES = ("circle", "square", "triangle", "cross", "ring", "diamond", "hbar", "vbar")


@dataclass
class ImageDataset:
    name: str
    train_x: torch.Tensor  # [N, C, H, W] float in [0, 1]
    train_y: torch.Tensor  # [N] int64
    test_x: torch.Tensor
    test_y: torch.Tensor
    classes: tuple

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def image_shape(self) -> tuple:
        return tuple(self.train_x.shape[1:])

    def validate(self) -> None:
        if len(self.train_x) == 0 or len(self.test_x) == 0:
            raise DataError(f"dataset {self.name!r} has an empty split")
        if len(self.classes) < 2:
            raise DataError("need at least two classes")


def _shape_mask(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    cx, cy = rng.uniform(0.35, 0.65, size=2) * size
    r = rng.uniform(0.2, 0.32) * size
    dx, dy = xx - cx, yy - cy
    dist = np.hypot(dx, dy)
    if kind == "circle":
        return dist <= r
    if kind == "square":
        return (np.abs(dx) <= 0.8 * r) & (np.abs(dy) <= 0.8 * r)
    if kind == "triangle":
        return (dy <= 0.8 * r) & (dy >= -r) & (np.abs(dx) <= 0.55 * (dy + r))
    if kind == "cross":
        t = r / 3
        return ((np.abs(dx) <= t) & (np.abs(dy) <= r)) | ((np.abs(dy) <= t) & (np.abs(dx) <= r))
    if kind == "ring":
        return (dist <= r) & (dist >= 0.55 * r)
    if kind == "diamond":
        return np.abs(dx) + np.abs(dy) <= 1.1 * r
    if kind == "hbar":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r / 3.5)
    if kind == "vbar":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r / 3.5)
    raise DataError(f"unknown shape {kind!r}")


def _render(kind: str, size: int, channels: int, rng: np.random.Generator) -> np.ndarray:
    mask = _shape_mask(kind, size, rng)
    bg = rng.uniform(0.0, 1.0, size=channels)
    fg = rng.uniform(0.0, 1.0, size=channels)
    while np.abs(fg - bg).max() < 0.45:
        fg = rng.uniform(0.0, 1.0, size=channels)
    img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
    img = img + rng.normal(0.0, 0.03, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _render_split(n: int, num_classes: int, size: int, channels: int, rng) -> tuple:
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    images = np.stack([_render(SHAPE_NAMES[k], size, channels, rng) for k in labels])
    return torch.as_tensor(images, dtype=torch.float32), torch.as_tensor(labels, dtype=torch.int64)


def make_shapes(
    num_classes: int = 5,
    size: int = 32,
    n_train: int = 2000,
    n_test: int = 500,
    channels: int = 3,
    seed: int = 0,
) -> ImageDataset:
    """Colored geometric shapes on random backgrounds, balanced across classes.

    Train and test splits come from independent random streams, so they
    never share an image.
    """
    if not 2 <= num_classes <= len(SHAPE_NAMES):
        raise DataError(f"num_classes must be in [2, {len(SHAPE_NAMES)}]")
    if n_train <= 0 or n_test <= 0:
        raise DataError("splits must be non-empty")
    train_rng, test_rng = (np.random.default_rng([seed, k]) for k in (0, 1))
    tx, ty = _render_split(n_train, num_classes, size, channels, train_rng)
    vx, vy = _render_split(n_test, num_classes, size, channels, test_rng)
    return ImageDataset("shapes", tx, ty, vx, vy, SHAPE_NAMES[:num_classes])


def _open(path: Path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def read_cifar10_batch(path) -> tuple:
    """Parse one CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes."""
    with _open(Path(path)) as fh:
        raw = np.frombuffer(fh.read(), dtype=np.uint8)
    if raw.size == 0 or raw.size % 3073:
        raise DataError(f"{path}: size {raw.size} is not a multiple of 3073")
    raw = raw.reshape(-1, 3073)
    labels = raw[:, 0].astype(np.int64)
    images = raw[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return torch.as_tensor(images), torch.as_tensor(labels)


CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)


def load_cifar10(root, train_files: Sequence[str] = None, test_file: str = "test_batch.bin") -> ImageDataset:
    root = Path(root)
    train_files = train_files or [f"data_batch_{i}.bin" for i in range(1, 6)]
    parts = [read_cifar10_batch(root / f) for f in train_files if (root / f).exists()]
    if not parts or not (root / test_file).exists():
        raise DataError(f"no CIFAR-10 binary batches under {root}")
    tx = torch.cat([p[0] for p in parts])
    ty = torch.cat([p[1] for p in parts])
    vx, vy = read_cifar10_batch(root / test_file)
    return ImageDataset("cifar10", tx, ty, vx, vy, CIFAR10_CLASSES)


def read_idx(path) -> np.ndarray:
    """Read an IDX file (the MNIST container format)."""
    with _open(Path(path)) as fh:
        data = fh.read()
    if len(data) < 4:
        raise DataError(f"{path}: truncated IDX header")
    zero, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or dtype_code != 0x08:
        raise DataError(f"{path}: only unsigned-byte IDX files are supported")
    dims = struct.unpack(">" + "I" * ndim, data[4 : 4 + 4 * ndim])
    body = np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim)
    if body.size != int(np.prod(dims)):
        raise DataError(f"{path}: payload size does not match header {dims}")
    return body.reshape(dims)


def load_mnist(root) -> ImageDataset:
    root = Path(root)

    def find(stem):
        for name in (stem, stem + ".gz"):
            if (root / name).exists():
                return root / name
        raise DataError(f"missing {stem} under {root}")

    def images(stem):
        arr = read_idx(find(stem)).astype(np.float32) / 255.0
        return torch.as_tensor(arr[:, None])

    def labels(stem):
        return torch.as_tensor(read_idx(find(stem)).astype(np.int64))

    return ImageDataset(
        "mnist",
        images("train-images-idx3-ubyte"),
        labels("train-labels-idx1-ubyte"),
        images("t10k-images-idx3-ubyte"),
        labels("t10k-labels-idx1-ubyte"),
        tuple(str(i) for i in range(10)),
    )


def load_dataset(spec: dict) -> ImageDataset:
    """Build a dataset from a config mapping such as ``{"name": "shapes", ...}``."""
    spec = dict(spec)
    name = spec.pop("name", "shapes")
    if name == "shapes":
        ds = make_shapes(**spec)
    elif name == "cifar10":
        ds = load_cifar10(spec["root"])
    elif name == "mnist":
        ds = load_mnist(spec["root"])
    else:
        raise DataError(f"unknown dataset {name!r}")
    ds.validate()
    return ds
