"""Shared machinery for query-based attackers."""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn.functional as F

from ..attackloss import margin
from ..core import AttackGoal, AttackResult, project_feasible
from ..errors import ConfigError
from ..models.oracle import TargetOracle


class Episode:
    """Binds one oracle, image and goal; evaluates candidate perturbations.

    Every :meth:`evaluate` call is exactly one oracle query.  ``trace`` keeps
    ``(query_index, margin, success)`` for every charge made here.
    """

    def __init__(self, oracle: TargetOracle, x: torch.Tensor, goal: AttackGoal, epsilon: float):
        if epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        self.oracle = oracle
        self.x = x
        self.goal = goal
        self.epsilon = epsilon
        self.start = oracle.ledger.used
        self.trace = []

    @property
    def remaining(self) -> int:
        return self.oracle.ledger.remaining

    @property
    def used(self) -> int:
        return self.oracle.ledger.used - self.start

    def evaluate(self, delta: torch.Tensor):
        """Query ``x + delta`` and return ``(margin, success, log_probs, delta_eff)``.

        ``delta_eff`` is the perturbation actually applied after projection
        and clamping to the image box.
        """
        delta_eff = project_feasible(self.x, delta, self.epsilon)
        x_adv = self.x + delta_eff
        scores = self.oracle.query(x_adv, self.goal)
        success = bool(self.oracle.ledger.log[-1][1])
        log_p = F.log_softmax(self.oracle.log_scores(scores), -1)
        m = float(margin(log_p, self.goal))
        self.trace.append((self.oracle.ledger.used, m, success))
        return m, success, log_p, delta_eff

    def result(self, success: bool, delta: Optional[torch.Tensor]) -> AttackResult:
        if delta is None:
            delta = torch.zeros_like(self.x)
        used = self.used
        return AttackResult(success, used, delta, first_query_success=success and used == 1)


class Attacker:
    """Interface: ``run(oracle, x, goal, epsilon, init=None, rng=None)``.

    ``init`` is an optional starting perturbation.  Search-based attackers
    use it as their initial state; sampling-based ones use it as the mean of
    their search distribution.  The first query always evaluates the
    starting point, so an adversarial ``init`` finishes in one query.
    """

    name = "base"
    kind = "search"

    def run(self, oracle, x, goal, epsilon, init=None, rng=None) -> AttackResult:
        episode = Episode(oracle, x, goal, epsilon)
        if episode.remaining <= 0:
            start = init if init is not None else torch.zeros_like(x)
            return episode.result(False, project_feasible(x, start, epsilon))
        self.last_trace = episode.trace
        return self._run(episode, init, rng if rng is not None else torch.Generator().manual_seed(0))

    def _run(self, episode: Episode, init, rng) -> AttackResult:
        raise NotImplementedError
