"""Maximum-likelihood pre-training and batch-REPTILE meta-training of the generator."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

import torch

from .attackloss import adv_margin_loss
from .core import AttackGoal
from .errors import ConfigError, NumericalError, ShapeError
from .flowgen.generator import log_likelihood, project_ste, rsample
from .flowgen.glow import ConditionalGlow
from .models.zoo import Classifier, surrogate_log_scores

logger = logging.getLogger(__name__)


@dataclass
class TaskSpec:
    """One benign image to attack; the surrogate is supplied by the caller."""

    x: torch.Tensor
    goal: AttackGoal
    image_id: Optional[int] = None


@dataclass
class MetaTrainConfig:
    n_tasks_per_batch: int = 16
    k_inner_steps: int = 4
    alpha: float = 3e-4
    beta: float = 6e-4
    batches: int = 1000
    seed: int = 0
    checkpoint_every: int = 0
    inner_optimizer: str = "adam"
    n_samples: int = 1
    temperature: float = 1.0
    scope: str = "all"

    def __post_init__(self):
        if self.n_tasks_per_batch <= 0 or self.k_inner_steps < 0 or self.batches < 0:
            raise ConfigError("task count must be positive; steps and batches non-negative")
        if self.alpha <= 0 or self.beta < 0:
            raise ConfigError("alpha must be positive and beta non-negative")
        if self.inner_optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown inner optimizer {self.inner_optimizer!r}")


# ------------------------------------------------------------------ pre-train


def pretrain_generator(
    corpus: dict,
    images: torch.Tensor,
    params: ConditionalGlow,
    lr: float = 1e-3,
    epochs: int = 10,
    batch_size: int = 16,
    seed: int = 0,
    init_actnorm: bool = True,
):
    """Fit the generator to a PGD corpus by maximising ``log p(delta | x)``.

    ``corpus["image_ids"]`` index into ``images``.  Returns a trained copy
    and the per-step mean negative log-likelihood (nats per dimension).
    """
    deltas, ids = corpus["deltas"], corpus["image_ids"]
    if len(deltas) == 0:
        raise ConfigError("empty perturbation corpus")
    params = copy.deepcopy(params)
    curve = []
    if epochs <= 0:
        return params, curve
    xs = images[ids]
    gen = torch.Generator().manual_seed(seed)
    if init_actnorm:
        idx = torch.randperm(len(deltas), generator=gen)[: max(batch_size, 256)]
        with torch.no_grad():
            params.encode(params.to_flow_space(deltas[idx]), xs[idx], init_actnorm=True)
    opt = torch.optim.Adam(params.parameters(), lr=lr)
    params.train()
    for epoch in range(epochs):
        order = torch.randperm(len(deltas), generator=gen)
        for step, i in enumerate(range(0, len(deltas), batch_size)):
            idx = order[i : i + batch_size]
            nll = -log_likelihood(deltas[idx], xs[idx], params).mean() / params.dim
            if not torch.isfinite(nll):
                raise NumericalError(f"non-finite NLL at epoch {epoch}, step {step}: {float(nll)}")
            opt.zero_grad()
            nll.backward()
            opt.step()
            curve.append(nll.item())
        logger.info("pretrain epoch %d nll/dim %.4f", epoch, curve[-1])
    params.eval()
    return params, curve


# ----------------------------------------------------------------- inner loop


def surrogate_task_loss(
    params: ConditionalGlow,
    task: TaskSpec,
    surrogate: Classifier,
    rng: Optional[torch.Generator] = None,
    n_samples: int = 1,
    temperature: float = 1.0,
) -> torch.Tensor:
    """Surrogate margin loss of freshly sampled perturbation(s) for ``task``.

    Projection to the epsilon ball and clamping to the image box use
    straight-through gradients so the loss never goes flat at the boundary.
    """
    delta = project_ste(rsample(task.x, params, temperature, rng, n_samples), params.epsilon)
    x_adv = task.x.unsqueeze(0) + delta
    x_adv = x_adv + (x_adv.clamp(0, 1) - x_adv).detach()
    log_p = surrogate_log_scores(surrogate, x_adv)
    return adv_margin_loss(log_p, task.goal).mean()


def _trainable(params, scope: str) -> list:
    if hasattr(params, "adaptation_parameters"):
        return params.adaptation_parameters(scope)
    if scope != "all":
        raise ConfigError(f"module {type(params).__name__} has no parameter scopes")
    return list(params.parameters())


def inner_adapt(
    params: torch.nn.Module,
    task: TaskSpec,
    model: Optional[Classifier],
    k: int,
    alpha: float,
    rng: Optional[torch.Generator] = None,
    scope: str = "all",
    optimizer: str = "adam",
    loss_fn: Optional[Callable] = None,
    n_samples: int = 1,
    temperature: float = 1.0,
    trace: Optional[list] = None,
):
    """Run ``k`` optimiser steps on a private copy of ``params``.

    A fresh optimiser is created per call.  ``loss_fn(params, task, rng)``
    overrides the default sampled surrogate margin loss.  Loss values seen
    at each step are appended to ``trace`` when given.
    """
    if k < 0:
        raise ConfigError("k must be non-negative")
    adapted = copy.deepcopy(params)
    if k == 0:
        return adapted
    if loss_fn is None:

        def loss_fn(p, t, g):
            return surrogate_task_loss(p, t, model, g, n_samples, temperature)

    trainable = _trainable(adapted, scope)
    if optimizer == "adam":
        opt = torch.optim.Adam(trainable, lr=alpha)
    elif optimizer == "sgd":
        opt = torch.optim.SGD(trainable, lr=alpha)
    else:
        raise ConfigError(f"unknown optimizer {optimizer!r}")
    for _ in range(k):
        loss = loss_fn(adapted, task, rng)
        # autograd.grad keeps surrogate parameters free of stray gradients
        grads = torch.autograd.grad(loss, trainable, allow_unused=True)
        for p, g in zip(trainable, grads):
            p.grad = torch.zeros_like(p) if g is None else g
        opt.step()
        if trace is not None:
            trace.append(loss.item())
    return adapted


# ----------------------------------------------------------------- outer loop


def reptile_outer(phi, adapted: list, beta: float):
    """``phi + beta * mean_i(phi_i - phi)`` for modules or dicts of tensors."""
    if not adapted:
        raise ConfigError("need at least one adapted parameter set")
    if isinstance(phi, torch.nn.Module):
        out = copy.deepcopy(phi)
        others = [dict(a.named_parameters()) for a in adapted]
        with torch.no_grad():
            for name, p in out.named_parameters():
                p.copy_(_reptile_array(p, [o[name] for o in others], beta))
        return out
    return {name: _reptile_array(p, [a[name] for a in adapted], beta) for name, p in phi.items()}


def _reptile_array(p: torch.Tensor, others: list, beta: float) -> torch.Tensor:
    p = torch.as_tensor(p)
    for o in others:
        if torch.as_tensor(o).shape != p.shape:
            raise ShapeError(f"shape {tuple(torch.as_tensor(o).shape)} != {tuple(p.shape)}")
    mean_diff = torch.stack([torch.as_tensor(o) - p for o in others]).mean(0)
    return p + beta * mean_diff


# -------------------------------------------------------------------- driver


def task_stream(images: torch.Tensor, labels: torch.Tensor, seed: int = 0) -> Iterator[TaskSpec]:
    """Untargeted tasks, reshuffled each pass over the images."""
    gen = torch.Generator().manual_seed(seed)
    while True:
        for i in torch.randperm(len(images), generator=gen).tolist():
            yield TaskSpec(images[i], AttackGoal.untargeted(int(labels[i])), i)


@torch.no_grad()
def _param_distance(a: torch.nn.Module, b: torch.nn.Module) -> float:
    total = 0.0
    for pa, pb in zip(a.parameters(), b.parameters()):
        total += ((pa - pb) ** 2).sum().item()
    return math.sqrt(total)


def meta_train(
    config: MetaTrainConfig,
    pretrained: torch.nn.Module,
    tasks: Iterator[TaskSpec],
    surrogate: Optional[Classifier] = None,
    loss_fn: Optional[Callable] = None,
    log_path=None,
    on_checkpoint: Optional[Callable] = None,
):
    """Batch REPTILE: adapt each task of a batch from the same meta parameters,
    then move the meta parameters toward the mean of the adapted ones."""
    rng = torch.Generator().manual_seed(config.seed)
    phi = copy.deepcopy(pretrained)
    log_fh = open(log_path, "w") if log_path else None
    try:
        for b in range(config.batches):
            batch = [next(tasks) for _ in range(config.n_tasks_per_batch)]
            adapted, first, last = [], [], []
            for task in batch:
                trace = []
                adapted.append(
                    inner_adapt(
                        phi, task, surrogate, config.k_inner_steps, config.alpha, rng,
                        scope=config.scope, optimizer=config.inner_optimizer, loss_fn=loss_fn,
                        n_samples=config.n_samples, temperature=config.temperature, trace=trace,
                    )
                )
                if trace:
                    first.append(trace[0])
                    last.append(trace[-1])
            new_phi = reptile_outer(phi, adapted, config.beta)
            row = {
                "batch": b,
                "inner_loss_before": sum(first) / len(first) if first else None,
                "inner_loss_after": sum(last) / len(last) if last else None,
                "param_delta_norm": _param_distance(new_phi, phi),
            }
            phi = new_phi
            if log_fh:
                log_fh.write(json.dumps(row) + "\n")
            if b % 50 == 0:
                logger.info("meta batch %d %s", b, row)
            if on_checkpoint and config.checkpoint_every and (b + 1) % config.checkpoint_every == 0:
                on_checkpoint(phi, b + 1, rng.get_state())
    finally:
        if log_fh:
            log_fh.close()
    return phi
