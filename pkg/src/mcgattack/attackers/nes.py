"""NES: antithetic Gaussian gradient estimation with signed l-infinity steps."""

import torch

from ..core import project_feasible
from ..errors import ConfigError
from .base import Attacker


def nes_gradient(loss_fn, delta: torch.Tensor, sigma: float, n_pairs: int, rng) -> torch.Tensor:
    """Antithetic estimate ``(1 / 2 sigma q) sum_i [L(d + s u_i) - L(d - s u_i)] u_i``."""
    grad = torch.zeros_like(delta)
    for _ in range(n_pairs):
        u = torch.randn(delta.shape, generator=rng, dtype=delta.dtype)
        grad += (loss_fn(delta + sigma * u) - loss_fn(delta - sigma * u)) * u
    return grad / (2 * sigma * n_pairs)


class _Found(Exception):
    def __init__(self, delta):
        self.delta = delta


class NESAttack(Attacker):
    """Sampling-based attacker; ``init`` becomes the mean of its search
    distribution.  Each iteration spends ``population`` queries (antithetic
    pairs) and no extra query on the updated mean."""

    name = "nes"
    kind = "sampling"

    def __init__(self, sigma: float = 0.01, population: int = 20, lr=None):
        if sigma <= 0:
            raise ConfigError("sigma must be positive")
        if population <= 0 or population % 2:
            raise ConfigError("population must be a positive even number")
        self.sigma = sigma
        self.population = population
        self.lr = lr

    def _run(self, ep, init, rng):
        x, eps = ep.x, ep.epsilon
        lr = eps / 10 if self.lr is None else self.lr
        mean = torch.zeros_like(x) if init is None else init.detach().clone()
        _, success, _, mean = ep.evaluate(mean)
        if success:
            return ep.result(True, mean)

        def loss(d):
            m, success, _, d_eff = ep.evaluate(d)
            if success:
                raise _Found(d_eff)
            return m

        while ep.remaining >= 2:
            pairs = min(self.population // 2, ep.remaining // 2)
            try:
                grad = nes_gradient(loss, mean, self.sigma, pairs, rng)
            except _Found as hit:
                return ep.result(True, hit.delta)
            mean = project_feasible(x, mean - lr * grad.sign(), eps)
        return ep.result(False, mean)
