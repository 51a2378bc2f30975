"""Margin and mimicry losses, and the PGD attack used to build pre-training data."""

from __future__ import annotations

import logging

import torch

from .core import AttackGoal, project_feasible
from .errors import ConfigError, InvalidGoal, InvalidScores, ShapeError
from .models.zoo import Classifier, surrogate_log_scores
from .serialization import content_hash, load_container, save_container

logger = logging.getLogger(__name__)


def to_log_space(probs: torch.Tensor) -> torch.Tensor:
    return torch.log(probs.clamp_min(torch.finfo(probs.dtype).tiny))


def margin(scores: torch.Tensor, goal: AttackGoal) -> torch.Tensor:
    """Unhinged margin over the last axis; negative means the goal is met.

    Untargeted: ``s_y - max_{j != y} s_j``.  Targeted: ``max_{j != t} s_j - s_t``.
    """
    k = scores.shape[-1]
    anchor = goal.target_label if goal.is_targeted else goal.true_label
    if not 0 <= goal.true_label < k or not 0 <= anchor < k:
        raise InvalidGoal(f"label out of range for {k} classes")
    mask = torch.zeros(k, dtype=torch.bool)
    mask[anchor] = True
    s_anchor = scores[..., anchor]
    s_other = scores.masked_fill(mask, float("-inf")).amax(-1)
    return s_other - s_anchor if goal.is_targeted else s_anchor - s_other


def adv_margin_loss(scores: torch.Tensor, goal: AttackGoal, from_probs: bool = False) -> torch.Tensor:
    """Hinged margin loss on log-space scores (logits or log-probabilities).

    Set ``from_probs`` when ``scores`` are probabilities; they are moved to log
    space first.  The result is non-negative and zero iff the margin condition
    holds.
    """
    scores = torch.as_tensor(scores)
    if scores.shape[-1] < 2:
        raise InvalidScores("need at least two class scores")
    if from_probs:
        scores = to_log_space(scores)
    return margin(scores, goal).clamp_min(0.0)


def mimic_ce_loss(surrogate_scores: torch.Tensor, target_scores: torch.Tensor, log_input: bool = False) -> torch.Tensor:
    """Soft-label cross entropy ``-sum_i target_i * log surrogate_i``.

    ``surrogate_scores`` are probabilities, or log-probabilities when
    ``log_input`` is set (preferred, it avoids ``log(0)``).  Works over the last
    axis and sums any leading batch axes.
    """
    target_scores = torch.as_tensor(target_scores)
    if surrogate_scores.shape != target_scores.shape:
        raise ShapeError("surrogate and target score vectors differ in shape")
    if ((target_scores.sum(-1) - 1).abs() > 1e-3).any() or (target_scores < 0).any():
        raise InvalidScores("target scores are not a probability vector")
    log_s = surrogate_scores if log_input else to_log_space(surrogate_scores)
    # 0 * log 0 contributes nothing
    terms = torch.where(target_scores > 0, target_scores * log_s, torch.zeros_like(log_s))
    return -terms.sum()


def pgd_attack(
    model: Classifier,
    x: torch.Tensor,
    y,
    epsilon: float,
    step_size: float,
    iters: int,
    goal: AttackGoal = None,
) -> torch.Tensor:
    """l-infinity PGD with sign steps on the surrogate margin.

    ``x`` may be one image or a batch; ``y`` the matching label(s).  For a
    batch, ``goal`` must be ``None`` (untargeted on ``y``) and the margin is
    computed per example.  Returns the perturbation, already projected onto
    the epsilon ball and such that ``x + delta`` lies in ``[0, 1]``.
    """
    if iters <= 0:
        raise ConfigError("iters must be positive")
    if epsilon < 0 or step_size <= 0:
        raise ConfigError("epsilon must be >= 0 and step_size > 0")
    single = x.ndim == 3
    xb = x.unsqueeze(0) if single else x
    if goal is not None and not single:
        raise ConfigError("an explicit goal is only supported for a single image")
    yb = torch.as_tensor(y).reshape(-1)
    delta = torch.zeros_like(xb)
    if epsilon == 0:
        return delta[0] if single else delta
    was_training = model.training
    model.eval()
    for _ in range(iters):
        delta.requires_grad_(True)
        log_p = surrogate_log_scores(model, xb + delta)
        if goal is not None:
            m = margin(log_p[0], goal)
        else:
            m = _batch_margin(log_p, yb)
        (grad,) = torch.autograd.grad(m.sum(), delta)
        with torch.no_grad():
            delta = project_feasible(xb, delta - step_size * grad.sign(), epsilon)
    model.train(was_training)
    delta = delta.detach()
    return delta[0] if single else delta


def _batch_margin(log_p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    true = log_p.gather(1, y[:, None]).squeeze(1)
    other = log_p.scatter(1, y[:, None], float("-inf")).amax(1)
    return true - other


def generate_pgd_corpus(
    model: Classifier,
    images: torch.Tensor,
    labels: torch.Tensor,
    epsilon: float = 0.05,
    step_size: float = 0.01,
    iters: int = 50,
    batch_size: int = 256,
) -> dict:
    """One untargeted PGD perturbation per image; unsuccessful runs are kept."""
    deltas = []
    for i in range(0, len(images), batch_size):
        deltas.append(pgd_attack(model, images[i : i + batch_size], labels[i : i + batch_size], epsilon, step_size, iters))
    deltas = torch.cat(deltas)
    with torch.no_grad():
        fooled = (model(images + deltas).argmax(1) != labels).float().mean().item()
    logger.info("PGD corpus: %d perturbations, white-box fooling rate %.3f", len(deltas), fooled)
    return {
        "image_ids": torch.arange(len(images)),
        "deltas": deltas,
        "meta": dict(epsilon=epsilon, step_size=step_size, iters=iters, fooling_rate=fooled),
    }


def save_corpus(corpus: dict, path, surrogate_path=None) -> None:
    meta = dict(corpus["meta"])
    if surrogate_path is not None:
        meta["surrogate_hash"] = content_hash(surrogate_path)
    save_container(path, {"image_ids": corpus["image_ids"], "deltas": corpus["deltas"]}, meta)


def load_corpus(path) -> dict:
    arrays, meta = load_container(path)
    return {"image_ids": arrays["image_ids"], "deltas": arrays["deltas"], "meta": meta}
