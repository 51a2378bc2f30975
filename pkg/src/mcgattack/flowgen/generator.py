"""Functional interface to the conditional generator: likelihood, sampling, I/O."""

from __future__ import annotations

import copy
from typing import Optional

import torch

from ..core import project_linf
from ..errors import NumericalError, ShapeError
from ..serialization import load_container, save_container
from .glow import ConditionalGlow


def _batched(x: torch.Tensor, ndim: int):
    if x.ndim == ndim:
        return x.unsqueeze(0), True
    if x.ndim == ndim + 1:
        return x, False
    raise ShapeError(f"expected a {ndim}-d tensor or a batch of them, got shape {tuple(x.shape)}")


def _check_finite(*tensors):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise NumericalError("non-finite value inside the flow")


def _match_batch(x: torch.Tensor, n: int) -> torch.Tensor:
    if x.shape[0] == n:
        return x
    if x.shape[0] == 1:
        return x.expand(n, *x.shape[1:])
    raise ShapeError(f"batch of {x.shape[0]} images for {n} latents")


def flow_forward(z: torch.Tensor, x: torch.Tensor, params: ConditionalGlow):
    """Map latent(s) to raw (unprojected) perturbation(s).

    Returns ``(delta, logdet)`` with ``logdet = log|det d delta / d z|``
    (measured in the generator's working space, i.e. the DCT block when
    dimension reduction is on).
    """
    zb, single = _batched(z, 1)
    xb, _ = _batched(x, 3)
    if zb.shape[1] != params.dim:
        raise ShapeError(f"latent has dim {zb.shape[1]}, generator expects {params.dim}")
    xb = _match_batch(xb, zb.shape[0])
    coeffs, logdet = params.decode(zb, xb)
    delta = params.from_flow_space(coeffs)
    _check_finite(delta, logdet)
    return (delta[0], logdet[0]) if single else (delta, logdet)


def flow_inverse(delta: torch.Tensor, x: torch.Tensor, params: ConditionalGlow):
    """Map perturbation(s) to latent(s); ``logdet = log|det d z / d delta|``."""
    db, single = _batched(delta, 3)
    xb, _ = _batched(x, 3)
    if tuple(db.shape[1:]) != params.image_shape:
        raise ShapeError(f"perturbation shape {tuple(db.shape[1:])} != generator shape {params.image_shape}")
    xb = _match_batch(xb, db.shape[0])
    z, logdet = params.encode(params.to_flow_space(db), xb)
    _check_finite(z, logdet)
    return (z[0], logdet[0]) if single else (z, logdet)


def log_likelihood(delta: torch.Tensor, x: torch.Tensor, params: ConditionalGlow) -> torch.Tensor:
    """Exact conditional log-density ``log p(delta | x)`` by change of variables."""
    z, logdet = flow_inverse(delta, x, params)
    return params.gaussian.log_prob(z) + logdet


def _latent(params: ConditionalGlow, n: int, temperature: float, rng: Optional[torch.Generator]):
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    mu, log_sigma = params.gaussian.mu, params.gaussian.log_sigma
    if temperature == 0:
        return mu.unsqueeze(0).expand(n, -1)
    noise = torch.randn((n, params.dim), generator=rng, dtype=mu.dtype)
    return mu + temperature * torch.exp(log_sigma) * noise


def rsample(x: torch.Tensor, params: ConditionalGlow, temperature: float = 1.0, rng=None, n: int = 1):
    """Reparameterised raw sample(s); gradients reach every generator parameter.

    ``x`` is a single image; the result has shape ``[n, C, H, W]``.
    """
    xb, _ = _batched(x, 3)
    z = _latent(params, n, temperature, rng)
    delta, _ = flow_forward(z, _match_batch(xb, n), params)
    return delta


def project_ste(delta: torch.Tensor, epsilon: float) -> torch.Tensor:
    """l-infinity projection whose backward pass is the identity."""
    return delta + (delta.clamp(-epsilon, epsilon) - delta).detach()


@torch.no_grad()
def sample(x: torch.Tensor, params: ConditionalGlow, temperature: float = 1.0, rng=None) -> torch.Tensor:
    """Draw one perturbation per image and project it to the epsilon ball."""
    xb, single = _batched(x, 3)
    z = _latent(params, xb.shape[0], temperature, rng)
    delta, _ = flow_forward(z, xb, params)
    delta = project_linf(delta, params.epsilon)
    return delta[0] if single else delta


def mode(x: torch.Tensor, params: ConditionalGlow) -> torch.Tensor:
    """Deterministic perturbation ``g(mu; x)`` projected to the epsilon ball."""
    return sample(x, params, temperature=0.0)


def clone_params(params: ConditionalGlow) -> ConditionalGlow:
    return copy.deepcopy(params)


def export_arrays(params: ConditionalGlow) -> dict:
    return {k.replace(".", "/"): v for k, v in params.state_dict().items()}


def save_generator(params: ConditionalGlow, path, provenance: Optional[dict] = None) -> None:
    meta = dict(params.config)
    meta.update(
        B=params.config["n_blocks"],
        S=params.config["n_steps"],
        input_dims=list(params.image_shape),
        provenance=provenance or {},
    )
    save_container(path, export_arrays(params), meta)


def load_generator(path) -> ConditionalGlow:
    arrays, meta = load_container(path)
    params = ConditionalGlow(
        meta["image_shape"],
        n_blocks=meta["n_blocks"],
        n_steps=meta["n_steps"],
        hidden=meta["hidden"],
        cond_channels=meta["cond_channels"],
        epsilon=meta["epsilon"],
        dct_factor=meta["dct_factor"],
    )
    params.load_state_dict({k.replace("/", "."): v for k, v in arrays.items()})
    params.provenance = meta.get("provenance", {})
    return params
