"""SimBA-DCT: greedy coordinate search over low-frequency DCT directions."""

import torch

from ..flowgen.dct import idct2
from .base import Attacker


def dct_directions(shape, freq_fraction: float = 0.25, dtype=None) -> torch.Tensor:
    """All low-frequency basis images ``[n, C, H, W]``, scaled to unit max-abs."""
    c, h, w = shape
    fh, fw = max(1, int(h * freq_fraction)), max(1, int(w * freq_fraction))
    coeffs = torch.zeros(c * fh * fw, c, h, w, dtype=dtype or torch.get_default_dtype())
    k = 0
    for ch in range(c):
        for u in range(fh):
            for v in range(fw):
                coeffs[k, ch, u, v] = 1.0
                k += 1
    basis = idct2(coeffs)
    return basis / basis.flatten(1).abs().amax(1).view(-1, 1, 1, 1)


class SimBADCTAttack(Attacker):
    """Try ``delta - step*q`` then ``delta + step*q`` for random low-frequency
    directions ``q``; keep a move only if it strictly lowers the true-class
    log-probability (raises the target-class one when targeted)."""

    name = "simba_dct"

    def __init__(self, step=None, freq_fraction: float = 0.25):
        self.step = step
        self.freq_fraction = freq_fraction
        self._cache = {}

    def _objective(self, log_p, goal):
        # quantity to minimise
        return float(-log_p[goal.target_label]) if goal.is_targeted else float(log_p[goal.true_label])

    def _run(self, ep, init, rng):
        x, eps, goal = ep.x, ep.epsilon, ep.goal
        step = eps if self.step is None else self.step
        key = (tuple(x.shape), self.freq_fraction, x.dtype)
        if key not in self._cache:
            self._cache[key] = dct_directions(x.shape, self.freq_fraction, x.dtype)
        basis = self._cache[key]
        delta = torch.zeros_like(x) if init is None else init.detach().clone()
        _, success, log_p, delta = ep.evaluate(delta)
        if success:
            return ep.result(True, delta)
        best = self._objective(log_p, goal)
        self.accepted = [best]
        while ep.remaining > 0:
            for j in torch.randperm(len(basis), generator=rng).tolist():
                for sign in (-1.0, 1.0):
                    if ep.remaining <= 0:
                        return ep.result(False, delta)
                    _, success, log_p, cand = ep.evaluate(delta + sign * step * basis[j])
                    if success:
                        return ep.result(True, cand)
                    value = self._objective(log_p, goal)
                    if value < best:
                        best, delta = value, cand
                        self.accepted.append(best)
                        break
        return ep.result(False, delta)
