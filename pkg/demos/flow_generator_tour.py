"""A short tour of the conditional flow generator.

Run with ``python3 demos/flow_generator_tour.py``.  Takes a few seconds.
"""

# %% Build a generator for 3x16x16 images with an epsilon of 8/255
import torch

from mcgattack.flowgen import ConditionalGlow, flow_forward, flow_inverse, log_likelihood, mode, sample

torch.manual_seed(0)
flow = ConditionalGlow((3, 16, 16), n_blocks=2, n_steps=2, hidden=16, cond_channels=4, epsilon=8 / 255)
x = torch.rand(3, 16, 16)
print(f"latent dimension {flow.dim}, parameters {sum(p.numel() for p in flow.parameters())}")

# %% A fresh flow is a permutation of its latent, so the mode is exactly zero
print("mode of an untrained flow is zero:", bool(mode(x, flow).abs().max() == 0))

# %% Nudge the parameters so the map is no longer trivial
with torch.no_grad():
    for p in flow.parameters():
        p.add_(0.05 * torch.randn_like(p))

# %% Samples are always inside the epsilon ball; temperature widens the spread
for temperature in (0.0, 1.0, 3.0):
    delta = sample(x, flow, temperature)
    saturated = float((delta.abs() >= flow.epsilon - 1e-7).float().mean())
    print(f"T={temperature}: max |delta| = {float(delta.abs().max()):.4f}, pixels at the bound {saturated:.0%}")

# %% The map is invertible and the likelihood is exact
z = torch.randn(flow.dim)
with torch.no_grad():
    delta, logdet = flow_forward(z, x, flow)
    back, inv_logdet = flow_inverse(delta, x, flow)
    ll = log_likelihood(delta, x, flow)
print(f"round-trip error {float((back - z).abs().max()):.2e}, log-dets sum to {float(logdet + inv_logdet):.2e}")
print(f"log p(delta | x) = {float(ll):.2f}")
