"""Named-array container (``.npz``) plus a JSON metadata sidecar."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch


def container_paths(path) -> tuple:
    """``(npz, json)`` paths for a checkpoint stem; dots inside the stem are kept."""
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".npz", ".json") else path
    return stem.with_name(stem.name + ".npz"), stem.with_name(stem.name + ".json")


def save_container(path, arrays: dict, metadata: dict) -> Path:
    npz_path, json_path = container_paths(path)
    npz_path.parent.mkdir(parents=True, exist_ok=True)
    plain = {
        k: (v.detach().cpu().numpy() if isinstance(v, torch.Tensor) else np.asarray(v))
        for k, v in arrays.items()
    }
    with open(npz_path, "wb") as fh:
        np.savez(fh, **plain)
    json_path.write_text(json.dumps(metadata, indent=2, sort_keys=True))
    return npz_path


def load_container(path) -> tuple:
    npz_path, json_path = container_paths(path)
    with np.load(npz_path, allow_pickle=False) as data:
        arrays = {k: torch.from_numpy(data[k].copy()) for k in data.files}
    metadata = json.loads(json_path.read_text()) if json_path.exists() else {}
    return arrays, metadata


def content_hash(path) -> str:
    npz_path, _ = container_paths(path)
    digest = hashlib.sha256()
    with open(npz_path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:16]


def tensor_checksum(tensors) -> str:
    """Stable digest over an iterable of tensors or a ``state_dict``-like mapping."""
    digest = hashlib.sha256()
    if isinstance(tensors, dict):
        for name in sorted(tensors):
            digest.update(name.encode())
        tensors = [tensors[name] for name in sorted(tensors)]
    for t in tensors:
        digest.update(t.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
