"""SignHunter: hierarchical sign flipping over the +/- epsilon sign vector."""

import math

import torch

from .base import Attacker


class SignHunterAttack(Attacker):
    """Flip contiguous chunks of the sign vector: the whole vector first, then
    halves, quarters, ... down to single coordinates, then start over.  A
    flip is kept only if it strictly lowers the oracle margin."""

    name = "signhunter"

    def _run(self, ep, init, rng):
        x, eps = ep.x, ep.epsilon
        if init is None:
            signs = torch.ones(x.numel(), dtype=x.dtype)
        else:
            signs = torch.sign(init.detach().reshape(-1)).to(x.dtype)
            signs[signs == 0] = 1.0
        n = signs.numel()
        start_point = init if init is not None else eps * signs.reshape(x.shape)
        best, success, _, delta = ep.evaluate(start_point)
        if success:
            return ep.result(True, delta)
        vertex = eps * signs.reshape(x.shape)
        if init is not None and not torch.equal(start_point, vertex) and ep.remaining > 0:
            # the init is not a hypercube vertex: measure its sign vertex once
            best, success, _, delta = ep.evaluate(vertex)
            if success:
                return ep.result(True, delta)
        level, idx = 0, 0
        while ep.remaining > 0:
            chunk = math.ceil(n / 2**level)
            start, end = idx * chunk, min(n, (idx + 1) * chunk)
            cand = signs.clone()
            cand[start:end] *= -1
            m, success, _, cand_eff = ep.evaluate(eps * cand.reshape(x.shape))
            if success:
                return ep.result(True, cand_eff)
            if m < best:
                best, signs, delta = m, cand, cand_eff
            idx += 1
            if idx == 2**level or end == n:
                level, idx = (0 if chunk == 1 else level + 1), 0
        return ep.result(False, delta)
