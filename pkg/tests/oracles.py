"""Independent reference computations shared by unit and acceptance tests."""

import math

import numpy as np
import scipy.stats
import torch

from mcgattack.flowgen import ConditionalGlow, flow_forward
from mcgattack.flowgen.glow import squeeze


def randomize_flow(flow: ConditionalGlow, seed: int, scale: float = 0.3) -> ConditionalGlow:
    """Move every generator parameter away from its identity initialisation."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in flow.named_parameters():
            noise = torch.randn(p.shape, generator=gen, dtype=p.dtype)
            if name.endswith("mix.weight"):
                n = p.shape[0]
                q, _ = torch.linalg.qr(torch.randn(n, n, generator=gen, dtype=p.dtype))
                p.copy_(q + scale * noise / n**0.5)
            elif name.endswith("gaussian.mu"):
                p.copy_(noise)
            else:
                p.copy_(scale * noise)
    return flow


def make_flow(shape=(1, 4, 4), blocks=1, steps=2, seed=0, dtype=torch.float64, epsilon=0.1, scale=0.3, **kw):
    flow = ConditionalGlow(shape, blocks, steps, hidden=8, cond_channels=4, epsilon=epsilon, **kw).to(dtype)
    return randomize_flow(flow, seed, scale)


def fd_logdet(flow: ConditionalGlow, z: torch.Tensor, x: torch.Tensor, h: float = 1e-6) -> float:
    """log|det d delta / d z| from a dense central-difference Jacobian."""
    d = z.numel()
    jac = np.empty((d, d))
    with torch.no_grad():
        for i in range(d):
            e = torch.zeros_like(z)
            e[i] = h
            plus, _ = flow_forward(z + e, x, flow)
            minus, _ = flow_forward(z - e, x, flow)
            jac[:, i] = ((plus - minus) / (2 * h)).reshape(-1).numpy()
    return float(np.linalg.slogdet(jac)[1])


def recomposed_log_likelihood(flow: ConditionalGlow, delta: torch.Tensor, x: torch.Tensor) -> float:
    """Walk every layer by hand, summing inverse log-dets, then add the
    Gaussian log-density of the recovered latent computed with scipy."""
    with torch.no_grad():
        h = flow.to_flow_space(delta.unsqueeze(0))
        conds = flow._conditions(x.unsqueeze(0))
        total = 0.0
        pieces = []
        for lvl, cond, block in zip(flow.levels, conds, flow.mapping.values()):
            h = squeeze(h)
            for step in block.values():
                for layer in (step.actnorm, step.mix):
                    h, ld = layer.encode(h)
                    total += float(ld[0])
                h, ld = step.coupling.encode(h, cond)
                total += float(ld[0])
            if lvl["split"]:
                pieces.append(h[:, lvl["keep"] :].reshape(-1))
                h = h[:, : lvl["keep"]]
        pieces.append(h.reshape(-1))
        z = torch.cat(pieces).numpy()
        mu = flow.gaussian.mu.numpy()
        sigma = np.exp(flow.gaussian.log_sigma.numpy())
        return float(scipy.stats.norm.logpdf(z, mu, sigma).sum()) + total


def toy_density_mass(flow: ConditionalGlow, x: torch.Tensor, half_width: float, n: int) -> float:
    """Riemann sum of exp(log p(delta | x)) over a square grid in 2-D."""
    from mcgattack.flowgen import log_likelihood

    axis = torch.linspace(-half_width, half_width, n, dtype=torch.float64)
    cell = (axis[1] - axis[0]) ** 2
    gx, gy = torch.meshgrid(axis, axis, indexing="ij")
    deltas = torch.stack([gx.reshape(-1), gy.reshape(-1)], 1).reshape(-1, *flow.image_shape)
    with torch.no_grad():
        ll = log_likelihood(deltas, x.unsqueeze(0).expand(len(deltas), *x.shape), flow)
    return float(torch.exp(ll).sum() * cell)


def cosine_dct2(x: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II written out as the explicit cosine double sum."""
    h, w = x.shape
    out = np.zeros((h, w))
    for u in range(h):
        for v in range(w):
            au = math.sqrt((1 if u == 0 else 2) / h)
            av = math.sqrt((1 if v == 0 else 2) / w)
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += x[i, j] * math.cos(math.pi * (2 * i + 1) * u / (2 * h)) * math.cos(math.pi * (2 * j + 1) * v / (2 * w))
            out[u, v] = au * av * acc
    return out
