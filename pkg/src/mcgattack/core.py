"""Domain types, l-infinity ball geometry, query accounting and success predicates.

Images and perturbations are plain ``torch.Tensor`` objects of shape
``[C, H, W]`` (or ``[N, C, H, W]`` where batching is noted).  Images live in
``[0, 1]``; perturbations are signed and bounded by ``epsilon`` after
projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch

from .errors import (
    BudgetExhausted,
    ConfigError,
    InvalidGoal,
    InvalidScores,
    InvalidTensor,
    ShapeError,
)

UNTARGETED = "untargeted"
TARGETED = "targeted"


@dataclass(frozen=True)
class AttackGoal:
    """What the attacker wants the classifier to output.

    ``target_label`` is only meaningful for targeted attacks.
    """

    mode: str
    true_label: int
    target_label: Optional[int] = None

    def __post_init__(self):
        if self.mode not in (UNTARGETED, TARGETED):
            raise InvalidGoal(f"unknown attack mode {self.mode!r}")
        if self.true_label < 0:
            raise InvalidGoal("true_label must be non-negative")
        if self.mode == TARGETED:
            if self.target_label is None or self.target_label < 0:
                raise InvalidGoal("targeted goal needs a non-negative target_label")
            if self.target_label == self.true_label:
                raise InvalidGoal("target_label must differ from true_label")

    @classmethod
    def untargeted(cls, y: int) -> "AttackGoal":
        return cls(UNTARGETED, int(y))

    @classmethod
    def targeted(cls, y: int, t: int) -> "AttackGoal":
        return cls(TARGETED, int(y), int(t))

    @property
    def is_targeted(self) -> bool:
        return self.mode == TARGETED

    def check(self, num_classes: int) -> None:
        if self.true_label >= num_classes:
            raise InvalidGoal(f"true_label {self.true_label} >= num_classes {num_classes}")
        if self.is_targeted and self.target_label >= num_classes:
            raise InvalidGoal(f"target_label {self.target_label} >= num_classes {num_classes}")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "true_label": self.true_label, "target_label": self.target_label}


@dataclass
class QueryLedger:
    """Hard budget accounting for one attack episode.

    Every score observation charges exactly one unit.  ``log`` holds one
    ``(query_index, success_flag)`` pair per charge; the flag is ``None`` when
    the caller did not say what it was trying to achieve.
    """

    budget: int
    used: int = 0
    log: list = field(default_factory=list)

    def __post_init__(self):
        if self.budget < 0:
            raise ConfigError("budget must be non-negative")

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    @property
    def exhausted(self) -> bool:
        return self.used >= self.budget

    def charge(self, success: Optional[bool] = None) -> int:
        if self.used >= self.budget:
            raise BudgetExhausted(f"budget of {self.budget} queries exhausted")
        self.used += 1
        self.log.append((self.used, success))
        return self.used


@dataclass
class AttackResult:
    success: bool
    queries_used: int
    final_delta: Optional[torch.Tensor]
    first_query_success: bool = False

    def __post_init__(self):
        if self.first_query_success and not (self.success and self.queries_used == 1):
            raise ValueError("first_query_success requires success with exactly one query")


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.get_default_dtype())


def project_linf(delta, epsilon: float) -> torch.Tensor:
    """Clamp every component of ``delta`` to ``[-epsilon, epsilon]``."""
    delta = _as_tensor(delta)
    if epsilon < 0:
        raise ConfigError("epsilon must be non-negative")
    if not torch.isfinite(delta).all():
        raise InvalidTensor("perturbation contains non-finite values")
    return delta.clamp(-epsilon, epsilon)


def clamp_adversarial(x, delta) -> torch.Tensor:
    """Return ``clamp(x + delta, 0, 1)``."""
    x, delta = _as_tensor(x), _as_tensor(delta)
    if x.shape != delta.shape:
        raise ShapeError(f"image shape {tuple(x.shape)} != perturbation shape {tuple(delta.shape)}")
    return (x + delta).clamp(0.0, 1.0)


def project_feasible(x, delta, epsilon: float) -> torch.Tensor:
    """Project ``delta`` so that it lies in the epsilon ball *and* ``x + delta``
    lies in ``[0, 1]``, both exactly in floating point.

    Clamping to the per-pixel bounds ``[max(-eps, -x), min(eps, 1 - x)]``
    avoids the one-ulp overshoot of ``clamp(x + delta, 0, 1) - x``.
    """
    x = _as_tensor(x)
    delta = project_linf(delta, epsilon)
    if x.shape != delta.shape:
        raise ShapeError(f"image shape {tuple(x.shape)} != perturbation shape {tuple(delta.shape)}")
    eps = torch.tensor(epsilon, dtype=delta.dtype)
    return torch.minimum(torch.maximum(delta, torch.maximum(-eps, -x)), torch.minimum(eps, 1 - x))


def predicted_label(scores) -> int:
    scores = _as_tensor(scores)
    if scores.ndim != 1 or scores.numel() == 0:
        raise InvalidScores("expected a non-empty 1-D score vector")
    # torch.argmax returns the first maximal index, i.e. ties go to the smallest class
    return int(torch.argmax(scores))


def is_success(scores, goal: AttackGoal) -> bool:
    """Strict-argmax success predicate on one score vector."""
    label = predicted_label(scores)
    goal.check(_as_tensor(scores).numel())
    if goal.is_targeted:
        return label == goal.target_label
    return label != goal.true_label
