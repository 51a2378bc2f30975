"""Attack-time pipeline: mimic fine-tuning of the surrogate, per-image
generator adaptation, and hand-off to a query-based attacker."""

from __future__ import annotations

import copy
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn.functional as F

from .attackers.base import Attacker
from .core import AttackGoal, AttackResult
from .errors import BudgetExhausted, ConfigError, HistoryEmpty, InvalidScores
from .flowgen.generator import sample
from .metatrain import TaskSpec, inner_adapt
from .models.oracle import TargetOracle
from .models.zoo import Classifier, freeze_except_last, surrogate_log_scores

logger = logging.getLogger(__name__)

BENIGN = "benign"
ADVERSARIAL = "adversarial"


@dataclass(frozen=True, eq=False)
class HistoryRecord:
    image: torch.Tensor
    target_scores: torch.Tensor  # probability vector
    kind: str
    benign: Optional["HistoryRecord"] = None


class AttackHistory:
    """Bounded FIFO of target observations shared across episodes."""

    def __init__(self, capacity: int = 64):
        if capacity <= 0:
            raise ConfigError("history capacity must be positive")
        self.capacity = capacity
        self._records = deque(maxlen=capacity)

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def append(self, record: HistoryRecord) -> None:
        if record.kind not in (BENIGN, ADVERSARIAL):
            raise ValueError(f"unknown record kind {record.kind!r}")
        self._records.append(record)

    def sample(self, m: int, rng: Optional[torch.Generator] = None) -> list:
        n = len(self._records)
        if n == 0:
            raise HistoryEmpty("attack history is empty")
        if m <= n:
            idx = torch.randperm(n, generator=rng)[:m]
        else:
            idx = torch.randint(0, n, (m,), generator=rng)
        return [self._records[i] for i in idx.tolist()]

    def snapshot(self) -> "AttackHistory":
        other = AttackHistory(self.capacity)
        other._records.extend(self._records)
        return other


def _record_terms(records: list) -> tuple:
    """Flatten records into (images, targets) pairs; adversarial records also
    contribute their episode's benign observation."""
    images, targets = [], []
    for r in records:
        images.append(r.image)
        targets.append(r.target_scores)
        if r.kind == ADVERSARIAL and r.benign is not None:
            images.append(r.benign.image)
            targets.append(r.benign.target_scores)
    return torch.stack(images), torch.stack(targets)


def history_loss(model: Classifier, records: list) -> torch.Tensor:
    """Sum of soft-label cross entropies between surrogate and target outputs."""
    images, targets = _record_terms(records)
    if ((targets.sum(-1) - 1).abs() > 1e-3).any():
        raise InvalidScores("history targets must be probability vectors")
    log_p = surrogate_log_scores(model, images.to(next(model.parameters()).dtype))
    return -(targets * log_p).sum()


def finetune_surrogate(
    w: Classifier,
    history: AttackHistory,
    m: int = 4,
    s: int = 4,
    lam: float = 3e-4,
    rng: Optional[torch.Generator] = None,
    n_trainable: int = 3,
) -> Classifier:
    """Return a copy of ``w`` after ``s`` Adam steps of mimicry on history.

    Only the last ``n_trainable`` layer groups move; each step draws a fresh
    mini-batch of ``m`` records.
    """
    if len(history) == 0:
        raise HistoryEmpty("cannot fine-tune the surrogate without history")
    w_prime = copy.deepcopy(w)
    freeze_except_last(w_prime, min(n_trainable, len(w_prime.layer_groups())))
    if s == 0:
        return w_prime
    trainable = [p for p in w_prime.parameters() if p.requires_grad]
    opt = torch.optim.Adam(trainable, lr=lam)
    for _ in range(s):
        loss = history_loss(w_prime, history.sample(m, rng))
        opt.zero_grad()
        loss.backward()
        opt.step()
    w_prime.eval()
    return w_prime


def adapt_generator(meta, x, goal: AttackGoal, w_prime: Classifier, k: int, alpha: float, rng=None, scope: str = "all", **kwargs):
    """Per-image adaptation of the meta generator against the updated surrogate."""
    return inner_adapt(meta, TaskSpec(x, goal), w_prime, k, alpha, rng, scope=scope, **kwargs)


@dataclass
class MetaTestConfig:
    finetune_surrogate: bool = True
    adapt_generator: bool = True
    scope: str = "all"
    k: int = 4
    alpha: float = 3e-4
    s: int = 4
    lam: float = 3e-4
    m: int = 4
    history_capacity: int = 64
    n_trainable_groups: int = 3
    inner_temperature: float = 1.0
    init_temperature: float = 0.0
    n_samples: int = 1
    query_benign: bool = False
    reset_surrogate: bool = False


@dataclass
class EpisodeState:
    meta_params: torch.nn.Module
    surrogate: Classifier
    oracle: TargetOracle
    history: AttackHistory = field(default_factory=AttackHistory)
    adapted_params: Optional[torch.nn.Module] = None

    @property
    def ledger(self):
        return self.oracle.ledger


def _to_probs(oracle: TargetOracle, scores: torch.Tensor) -> torch.Tensor:
    return F.softmax(oracle.log_scores(scores), -1)


def attack_episode(
    x: torch.Tensor,
    goal: AttackGoal,
    state: EpisodeState,
    attacker: Attacker,
    config: MetaTestConfig,
    rng: Optional[torch.Generator] = None,
) -> AttackResult:
    """Attack one image: (b) mimic fine-tune, (a) adapt, (c) attack from the
    generator's perturbation.  Every charged observation is added to history.
    """
    rng = rng if rng is not None else torch.Generator().manual_seed(0)
    oracle = state.oracle

    if config.finetune_surrogate and len(state.history) > 0:
        state.surrogate = finetune_surrogate(
            state.surrogate, state.history, config.m, config.s, config.lam, rng, config.n_trainable_groups
        )
    if config.adapt_generator:
        state.adapted_params = adapt_generator(
            state.meta_params, x, goal, state.surrogate, config.k, config.alpha, rng,
            scope=config.scope, n_samples=config.n_samples, temperature=config.inner_temperature,
        )
    else:
        state.adapted_params = state.meta_params
    delta0 = sample(x, state.adapted_params, config.init_temperature, rng)

    observations = []
    oracle.observer = lambda image, scores: observations.append((image, _to_probs(oracle, scores)))
    extra = 0
    try:
        if config.query_benign and oracle.ledger.remaining > 0:
            oracle.query(x)
            extra = 1
        try:
            result = attacker.run(oracle, x, goal, state.adapted_params.epsilon, init=delta0, rng=rng)
        except BudgetExhausted:
            result = AttackResult(False, oracle.ledger.used, delta0)
    finally:
        oracle.observer = None
        state.adapted_params = None

    if extra:
        result = AttackResult(result.success, result.queries_used + extra, result.final_delta, False)
    if observations:
        anchor_image, anchor_scores = observations[0]
        benign = HistoryRecord(anchor_image, anchor_scores, BENIGN)
        state.history.append(benign)
        for image, scores in observations[1:]:
            state.history.append(HistoryRecord(image, scores, ADVERSARIAL, benign))
    return result
