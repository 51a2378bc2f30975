"""Experiment configuration: one structured file, nested or dotted flat keys.

Example (YAML)::

    dataset.name: shapes
    dataset.num_classes: 5
    attacker: square
    epsilon: 0.1
    budget: 1000
    meta_test.k: 4
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from ..errors import ConfigError
from ..metatest import MetaTestConfig
from ..metatrain import MetaTrainConfig

OUTPUT_ENV = "MCG_OUTPUT_DIR"


@dataclass
class ZooConfig:
    arch: str = "arch_a"
    epochs: int = 8
    seed: int = 0
    lr: float = 1e-3
    batch_size: int = 64


@dataclass
class PGDConfig:
    epsilon: float = 0.05
    step_size: float = 0.01
    iters: int = 50
    n_images: Optional[int] = None


@dataclass
class GeneratorConfig:
    n_blocks: int = 2
    n_steps: int = 4
    hidden: int = 32
    cond_channels: int = 8
    dct_factor: Optional[int] = None


@dataclass
class PretrainConfig:
    lr: float = 1e-3
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"name": "shapes"})
    output_dir: str = "runs"
    name: str = "experiment"
    # checkpoints
    surrogate: Optional[str] = None
    target: Optional[str] = None
    generator: Optional[str] = None
    corpus: Optional[str] = None
    # attack protocol
    attacker: str = "square"
    attacker_params: dict = field(default_factory=dict)
    goal: str = "untargeted"
    epsilon: float = 0.031
    budget: int = 10_000
    n_eval: int = 1000
    mcg: bool = True
    defense: Optional[dict] = None
    remote: Optional[dict] = None
    oracle_output: str = "probs"
    seed: int = 0
    trace: bool = False
    # stage sections
    zoo: ZooConfig = field(default_factory=ZooConfig)
    pgd: PGDConfig = field(default_factory=PGDConfig)
    generator_arch: GeneratorConfig = field(default_factory=GeneratorConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    meta_train: MetaTrainConfig = field(default_factory=MetaTrainConfig)
    meta_test: MetaTestConfig = field(default_factory=MetaTestConfig)

    def validate(self) -> None:
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.budget < 1:
            raise ConfigError("budget must be at least 1")
        if self.goal not in ("untargeted", "targeted"):
            raise ConfigError(f"unknown goal mode {self.goal!r}")
        if self.n_eval < 1:
            raise ConfigError("n_eval must be positive")

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.name

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def expand_flat(flat: dict) -> dict:
    """Turn ``{"a.b": 1}`` into ``{"a": {"b": 1}}``; nested input passes through."""
    out: dict = {}
    for key, value in flat.items():
        if isinstance(value, dict) and key not in ("dataset", "attacker_params", "defense", "remote"):
            value = expand_flat(value)
        parts = str(key).split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"key {key!r} collides with a scalar")
        if isinstance(value, dict) and isinstance(node.get(parts[-1]), dict):
            node[parts[-1]].update(value)
        else:
            node[parts[-1]] = value
    return out


def _build(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"section for {cls.__name__} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value)
        elif isinstance(current, dict) and isinstance(value, dict) and name == "dataset":
            kwargs[name] = value
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_value(text: str):
    """Parse a ``--set`` value with YAML scalar rules (``1e-3``, ``true``, ...)."""
    value = yaml.safe_load(text)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def load_config(path=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Load a YAML or JSON config; ``overrides`` use dotted keys.

    The ``MCG_OUTPUT_DIR`` environment variable, when set, replaces
    ``output_dir``.
    """
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            raw = json.loads(text) if str(path).endswith(".json") else (yaml.safe_load(text) or {})
        except (ValueError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    data = expand_flat(raw)
    if overrides:
        for key, value in expand_flat(overrides).items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key].update(value)
            else:
                data[key] = value
    if os.environ.get(OUTPUT_ENV):
        data["output_dir"] = os.environ[OUTPUT_ENV]
    cfg = _build(ExperimentConfig, data)
    cfg.validate()
    return cfg
