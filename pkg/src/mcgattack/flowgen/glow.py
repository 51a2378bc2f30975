"""Conditional Glow: an invertible map between a Gaussian latent and perturbations.

Layout follows Glow: ``n_blocks`` blocks, each a squeeze, ``n_steps`` flow
steps (actnorm -> invertible 1x1 mix -> affine coupling) and, for every block
but the last, a split that factors half the channels out to the latent.  The
benign image conditions the coupling layers through a small CNN whose
features are average-pooled to each block's resolution.

Direction naming: ``decode`` is the generative direction ``z -> delta`` and
``encode`` its inverse ``delta -> z``.  All log-determinants returned by
``encode`` are of the Jacobian ``d encode / d input``.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError, NumericalError, ShapeError
from .dct import dct_down, dct_up

LOG2 = math.log(2.0)
DCT_MIN_SIZE = 64


def squeeze(h: torch.Tensor) -> torch.Tensor:
    n, c, hh, ww = h.shape
    if hh % 2 == 0 and ww % 2 == 0:
        h = h.reshape(n, c, hh // 2, 2, ww // 2, 2).permute(0, 1, 3, 5, 2, 4)
        return h.reshape(n, 4 * c, hh // 2, ww // 2)
    # odd spatial size: fold everything into channels
    return h.reshape(n, c * hh * ww, 1, 1)


def unsqueeze(h: torch.Tensor, shape) -> torch.Tensor:
    c, hh, ww = shape
    n = h.shape[0]
    if hh % 2 == 0 and ww % 2 == 0:
        h = h.reshape(n, c, 2, 2, hh // 2, ww // 2).permute(0, 1, 4, 2, 5, 3)
        return h.reshape(n, c, hh, ww)
    return h.reshape(n, c, hh, ww)


def squeezed_shape(shape) -> tuple:
    c, hh, ww = shape
    if hh % 2 == 0 and ww % 2 == 0:
        return (4 * c, hh // 2, ww // 2)
    return (c * hh * ww, 1, 1)


class ActNorm(nn.Module):
    """Per-channel affine map; generative direction ``y = x * exp(logs) + bias``."""

    def __init__(self, channels: int):
        super().__init__()
        self.bias = nn.Parameter(torch.zeros(1, channels, 1, 1))
        self.logs = nn.Parameter(torch.zeros(1, channels, 1, 1))

    def encode(self, y, init=False):
        if init:
            with torch.no_grad():
                mean = y.mean(dim=(0, 2, 3), keepdim=True)
                std = y.std(dim=(0, 2, 3), keepdim=True, unbiased=False) if y.numel() > y.shape[1] else None
                self.bias.copy_(mean)
                if std is not None:
                    self.logs.copy_(torch.log(std.clamp_min(1e-6)))
        hw = y.shape[2] * y.shape[3]
        x = (y - self.bias) * torch.exp(-self.logs)
        return x, -hw * self.logs.sum().expand(y.shape[0])

    def decode(self, x):
        hw = x.shape[2] * x.shape[3]
        return x * torch.exp(self.logs) + self.bias, hw * self.logs.sum().expand(x.shape[0])


class InvConv1x1(nn.Module):
    """Invertible channel mixing ``y = W x`` applied at every pixel."""

    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.eye(channels))

    def _logabsdet(self):
        return torch.linalg.slogdet(self.weight)[1]

    def encode(self, y, init=False):
        hw = y.shape[2] * y.shape[3]
        w_inv = torch.linalg.inv(self.weight)
        x = torch.einsum("ij,njhw->nihw", w_inv, y)
        return x, (-hw * self._logabsdet()).expand(y.shape[0])

    def decode(self, x):
        hw = x.shape[2] * x.shape[3]
        y = torch.einsum("ij,njhw->nihw", self.weight, x)
        return y, (hw * self._logabsdet()).expand(x.shape[0])


class ZeroConv(nn.Conv2d):
    def __init__(self, cin, cout):
        super().__init__(cin, cout, 3, padding=1)
        nn.init.zeros_(self.weight)
        nn.init.zeros_(self.bias)


class AffineCoupling(nn.Module):
    """Conditional affine coupling.

    The first ``channels // 2`` channels and the conditioning features
    parameterise a shift and a scale for the remaining channels.  Scales are
    ``exp(ln2 * tanh(raw))`` and hence confined to ``[0.5, 2]``.
    """

    def __init__(self, channels: int, cond_channels: int, hidden: int):
        super().__init__()
        self.ca = channels // 2
        self.cb = channels - self.ca
        self.net = nn.Sequential(
            nn.Conv2d(self.ca + cond_channels, hidden, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(hidden, hidden, 1),
            nn.ReLU(),
            ZeroConv(hidden, 2 * self.cb),
        )

    def _params(self, xa, cond):
        h = self.net(torch.cat([xa, cond], 1))
        shift, raw = h[:, : self.cb], h[:, self.cb :]
        return shift, LOG2 * torch.tanh(raw)

    def encode(self, y, cond, init=False):
        ya, yb = y[:, : self.ca], y[:, self.ca :]
        shift, log_s = self._params(ya, cond)
        xb = (yb - shift) * torch.exp(-log_s)
        return torch.cat([ya, xb], 1), -log_s.flatten(1).sum(1)

    def decode(self, x, cond):
        xa, xb = x[:, : self.ca], x[:, self.ca :]
        shift, log_s = self._params(xa, cond)
        yb = xb * torch.exp(log_s) + shift
        return torch.cat([xa, yb], 1), log_s.flatten(1).sum(1)


class FlowStep(nn.Module):
    def __init__(self, channels: int, cond_channels: int, hidden: int):
        super().__init__()
        self.actnorm = ActNorm(channels)
        self.mix = InvConv1x1(channels)
        self.coupling = AffineCoupling(channels, cond_channels, hidden)

    def encode(self, y, cond, init=False):
        y, ld1 = self.actnorm.encode(y, init)
        y, ld2 = self.mix.encode(y)
        y, ld3 = self.coupling.encode(y, cond)
        return y, ld1 + ld2 + ld3

    def decode(self, x, cond):
        x, ld3 = self.coupling.decode(x, cond)
        x, ld2 = self.mix.decode(x)
        x, ld1 = self.actnorm.decode(x)
        return x, ld1 + ld2 + ld3


class ConditionNet(nn.Module):
    """Embeds the benign image into a feature map shared by all couplings."""

    def __init__(self, in_channels: int, cond_channels: int, hidden: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, hidden, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(hidden, cond_channels, 3, padding=1),
            nn.Tanh(),
        )

    def forward(self, x):
        return self.net(x)


class GaussianBase(nn.Module):
    """Diagonal Gaussian ``N(mu, diag(exp(log_sigma))^2)`` over the flat latent."""

    def __init__(self, dim: int):
        super().__init__()
        self.mu = nn.Parameter(torch.zeros(dim))
        self.log_sigma = nn.Parameter(torch.zeros(dim))

    def log_prob(self, z):
        if (self.log_sigma < -20).any():
            raise NumericalError("log_sigma below -20: base distribution is degenerate")
        u = (z - self.mu) * torch.exp(-self.log_sigma)
        per_dim = -0.5 * math.log(2 * math.pi) - self.log_sigma - 0.5 * u**2
        return per_dim.sum(-1)


class ConditionalGlow(nn.Module):
    """Conditional perturbation generator.

    Args:
        image_shape: ``(C, H, W)`` of images and perturbations.
        n_blocks, n_steps: flow depth (blocks of steps).
        hidden: width of the coupling networks.
        cond_channels: width of the image embedding fed to couplings.
        epsilon: l-infinity radius applied when perturbations are emitted.
        dct_factor: model perturbations in the ``1/f x 1/f`` low-frequency DCT
            block.  ``None`` picks 8 for images of at least 64x64 and raw
            pixel space otherwise; ``1`` forces pixel space.
    """

    def __init__(
        self,
        image_shape,
        n_blocks: int = 2,
        n_steps: int = 4,
        hidden: int = 32,
        cond_channels: int = 8,
        epsilon: float = 0.05,
        dct_factor=None,
    ):
        super().__init__()
        c, h, w = (int(s) for s in image_shape)
        if n_blocks < 1 or n_steps < 1:
            raise ConfigError("n_blocks and n_steps must be positive")
        if dct_factor is None:
            dct_factor = 8 if min(h, w) >= DCT_MIN_SIZE else 1
        if h % dct_factor or w % dct_factor:
            raise ShapeError(f"image {(h, w)} not divisible by DCT factor {dct_factor}")
        self.image_shape = (c, h, w)
        self.flow_shape = (c, h // dct_factor, w // dct_factor)
        self.config = dict(
            image_shape=list(self.image_shape),
            n_blocks=n_blocks,
            n_steps=n_steps,
            hidden=hidden,
            cond_channels=cond_channels,
            epsilon=epsilon,
            dct_factor=dct_factor,
        )
        self.epsilon = float(epsilon)
        self.dct_factor = dct_factor

        # plan the multi-scale layout
        self.levels = []
        shape = self.flow_shape
        for b in range(n_blocks):
            post = squeezed_shape(shape)
            ch = post[0]
            if ch < 2:
                raise ShapeError(f"block {b} has a single channel; cannot couple")
            split = b < n_blocks - 1
            keep = ch // 2 if split else ch
            self.levels.append(dict(pre=shape, post=post, split=split, keep=keep))
            shape = (keep, post[1], post[2])
        self.dim = c * self.flow_shape[1] * self.flow_shape[2]

        self.gaussian = GaussianBase(self.dim)
        self.mapping = nn.ModuleDict(
            {
                f"block{b}": nn.ModuleDict(
                    {f"step{s}": FlowStep(lvl["post"][0], cond_channels, hidden) for s in range(n_steps)}
                )
                for b, lvl in enumerate(self.levels)
            }
        )
        self.conditioner = ConditionNet(c, cond_channels)

    # ------------------------------------------------------------ plumbing

    def to_flow_space(self, delta):
        return delta if self.dct_factor == 1 else dct_down(delta, self.dct_factor)

    def from_flow_space(self, coeffs):
        if self.dct_factor == 1:
            return coeffs
        return dct_up(coeffs, self.image_shape[1], self.image_shape[2])

    def gaussian_parameters(self):
        return list(self.gaussian.parameters())

    def mapping_parameters(self):
        return list(self.mapping.parameters()) + list(self.conditioner.parameters())

    def adaptation_parameters(self, scope: str = "all"):
        if scope == "all":
            return list(self.parameters())
        if scope == "gaussian":
            return self.gaussian_parameters()
        raise ConfigError(f"unknown adaptation scope {scope!r}")

    def _conditions(self, x):
        feats = self.conditioner(x)
        return [F.adaptive_avg_pool2d(feats, lvl["post"][1:]) for lvl in self.levels]

    # ---------------------------------------------------------- directions

    def encode(self, delta_flow, x, init_actnorm: bool = False):
        """``[N, *flow_shape]`` perturbation -> ``([N, dim]`` latent, log-det)."""
        conds = self._conditions(x)
        h = delta_flow
        logdet = delta_flow.new_zeros(delta_flow.shape[0])
        zs = []
        for lvl, cond, block in zip(self.levels, conds, self.mapping.values()):
            h = squeeze(h)
            for step in block.values():
                h, ld = step.encode(h, cond, init_actnorm)
                logdet = logdet + ld
            if lvl["split"]:
                zs.append(h[:, lvl["keep"] :].flatten(1))
                h = h[:, : lvl["keep"]]
        zs.append(h.flatten(1))
        return torch.cat(zs, 1), logdet

    def decode(self, z, x):
        """``[N, dim]`` latent -> (``[N, *flow_shape]`` perturbation, log-det)."""
        conds = self._conditions(x)
        n = z.shape[0]
        # carve the flat latent back into per-level pieces
        sizes = []
        for lvl in self.levels:
            ch, hh, ww = lvl["post"]
            if lvl["split"]:
                sizes.append((ch - lvl["keep"]) * hh * ww)
        last = self.levels[-1]["post"]
        sizes.append(last[0] * last[1] * last[2])
        pieces = list(torch.split(z, sizes, dim=1))
        h = pieces.pop().reshape(n, *last)
        logdet = z.new_zeros(n)
        blocks = list(self.mapping.values())
        for i in reversed(range(len(self.levels))):
            lvl = self.levels[i]
            ch, hh, ww = lvl["post"]
            if lvl["split"]:
                out = pieces.pop().reshape(n, ch - lvl["keep"], hh, ww)
                h = torch.cat([h, out], 1)
            for step in reversed(list(blocks[i].values())):
                h, ld = step.decode(h, conds[i])
                logdet = logdet + ld
            h = unsqueeze(h, lvl["pre"])
        return h, logdet
