"""Walk the texture prior encoder: attention, selection, straight-through."""

import torch

from texdeblur.priors import TexturePriorEncoder

torch.manual_seed(0)
tpe = TexturePriorEncoder(channels=16, memory_size=64, downscale=4)
sharp = torch.rand(1, 3, 64, 64)
blurry = torch.rand(1, 3, 64, 64)

z_s = tpe.encode_tokens(sharp, "sharp")
enhanced = tpe.enhance_memory(z_s)
print(f"sharp tokens {tuple(z_s.shape)} -> enhanced memory {tuple(enhanced.shape)}")

z_b = tpe.encode_tokens(blurry, "blurry")
prior, idx = tpe.transfer_texture(z_b, enhanced)
used = idx.unique().numel()
print(f"prior {tuple(prior.shape)}, {used} of {tpe.memory_size} memory rows selected")

# the forward value is exactly the hard selection; the soft surrogate only
# shapes the backward pass
rows = torch.take_along_dim(enhanced, idx.reshape(1, -1, 1), dim=1)
hard = rows.transpose(1, 2).reshape(prior.shape)
print(f"forward equals hard selection: {torch.equal(prior, hard)}")

# gradients still reach the blurry encoder through the surrogate
loss = tpe(sharp, blurry).square().mean()
loss.backward()
g = tpe.blurry_encoder.net[0].weight.grad
print(f"blurry-encoder grad norm through the selection: {g.norm():.3e}")

# token order does not matter to the enhanced memory
perm = torch.randperm(z_s.shape[-2] * z_s.shape[-1])
shuffled = z_s.flatten(2)[:, :, perm].reshape(z_s.shape)
delta = (tpe.enhance_memory(shuffled) - enhanced).abs().max()
print(f"enhanced memory shift under token shuffle: {delta:.2e}")
