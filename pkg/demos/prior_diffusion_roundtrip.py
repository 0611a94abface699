"""Diffuse a prior to noise, run the reverse chain, inspect the marginals."""

import torch

from texdeblur.diffusion import Denoiser, diffuse, generate_prior, make_schedule, reverse_chain

torch.manual_seed(0)
sched = make_schedule(steps=8, beta_start=0.1, beta_end=0.9)
print("beta     ", [f"{b:.3f}" for b in sched.beta.tolist()])
print("alpha_bar", [f"{a:.4f}" for a in sched.alpha_bar.tolist()])
print(f"abar_T = {sched.alpha_bar[-1]:.2e}: the forward jump lands on near-pure noise")

z = torch.randn(4, 16, 8, 8)
z_T = diffuse(z, sched, seed=3)
print(f"forward: z std {z.std():.3f} -> z_T std {z_T.std():.3f} (expected about 1)")

den = Denoiser(channels=16, steps=8, blocks=5, sched=sched)
c = torch.randn(4, 16, 8, 8)
with torch.no_grad():
    z_hat = reverse_chain(z_T, c, sched, den, seed=4)
print(f"reverse chain: {den.calls} denoiser calls, z_hat std {z_hat.std():.3f}")
print("  (the anchored noise head keeps an untrained chain near zero)")

den.calls = 0
with torch.no_grad():
    sampled = generate_prior(c, sched, den, seed=5)
print(f"prior from pure noise: {den.calls} calls, std {sampled.std():.3f}")

# the final reverse step adds no noise, so sampling is seed-reproducible
with torch.no_grad():
    again = generate_prior(c, sched, den, seed=5)
print(f"same seed reproduces the prior: {torch.equal(sampled, again)}")
