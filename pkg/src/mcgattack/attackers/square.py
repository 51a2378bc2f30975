"""l-infinity Square attack: random square patches set to +/- epsilon."""

import math

import torch

from .base import Attacker


def p_selection(p_init: float, it: int, budget: int) -> float:
    """Piecewise-halving patch fraction, keyed to progress through the budget."""
    it = int(it / max(budget, 1) * 10000)
    for bound, div in ((10, 1), (50, 2), (200, 4), (500, 8), (1000, 16), (2000, 32), (4000, 64), (6000, 128), (8000, 256), (10000, 512)):
        if it <= bound:
            return p_init / div
    return p_init


class SquareAttack(Attacker):
    name = "square"

    def __init__(self, p_init: float = 0.1):
        self.p_init = p_init

    def _run(self, ep, init, rng):
        x, eps = ep.x, ep.epsilon
        c, h, w = x.shape
        if init is None:
            signs = torch.randint(0, 2, (c, 1, w), generator=rng).to(x.dtype) * 2 - 1
            delta = eps * signs.expand(c, h, w).clone()
        else:
            delta = init.detach().clone()
        best, success, _, delta = ep.evaluate(delta)
        if success:
            return ep.result(True, delta)
        budget = ep.oracle.ledger.budget - ep.start
        it = 0
        while ep.remaining > 0:
            p = p_selection(self.p_init, it, budget)
            s = int(round(math.sqrt(p * h * w)))
            s = max(1, min(s, h - 1, w - 1)) if min(h, w) > 1 else 1
            top = int(torch.randint(0, h - s + 1, (1,), generator=rng))
            left = int(torch.randint(0, w - s + 1, (1,), generator=rng))
            cand = delta.clone()
            window = x[:, top : top + s, left : left + s]
            current = (window + delta[:, top : top + s, left : left + s]).clamp(0, 1)
            for _ in range(10):
                vals = (torch.randint(0, 2, (c, 1, 1), generator=rng).to(x.dtype) * 2 - 1) * eps
                proposal = (window + vals).clamp(0, 1)
                # resample when the patch would not change the image
                if not torch.allclose(proposal, current, atol=1e-7, rtol=0):
                    break
            cand[:, top : top + s, left : left + s] = vals
            m, success, _, cand_eff = ep.evaluate(cand)
            if success:
                return ep.result(True, cand_eff)
            if m < best:
                best, delta = m, cand_eff
            it += 1
        return ep.result(False, delta)
