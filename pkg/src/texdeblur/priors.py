"""Memory-bank texture prior encoder.

A learnable memory of N texture templates is enhanced by attention over the
tokens of a sharp image, then each blurry token is replaced by its best
matching enhanced row (hard argmax, lowest index on ties).  The forward value
is therefore an exact row of the enhanced memory at every spatial position.

Hard selection has no useful gradient toward the blurry-token encoder, so the
backward pass adds a soft attention surrogate built from a detached copy of
the enhanced memory: the memory, refinement layer, and sharp encoder receive
the exact hard-selection gradients, while the blurry encoder trains through
the surrogate.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DataError, NumericalError


def _check_finite(x: torch.Tensor, stage: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NumericalError(f"non-finite values in {stage}")
    return x


class TokenEncoder(nn.Module):
    """Image (B, 3, H, W) -> tokens (B, C, H/downscale, W/downscale)."""

    def __init__(self, channels: int, downscale: int):
        super().__init__()
        if downscale < 1 or downscale & (downscale - 1):
            raise ConfigError(f"downscale must be a power of two, got {downscale}")
        self.downscale = downscale
        layers = [nn.Conv2d(3, channels, 3, padding=1), nn.GELU()]
        steps = int(math.log2(downscale))
        for _ in range(steps):
            layers += [nn.Conv2d(channels, channels, 3, stride=2, padding=1), nn.GELU()]
        self.net = nn.Sequential(*layers)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        h, w = image.shape[-2:]
        if h % self.downscale or w % self.downscale:
            raise DataError(
                f"spatial dims {h}x{w} not divisible by downscale {self.downscale}"
            )
        return self.net(image)


def lowest_index_argmax(scores: torch.Tensor) -> torch.Tensor:
    """Argmax along the last dim with ties resolved to the lowest index."""
    n = scores.shape[-1]
    maxv = scores.max(dim=-1, keepdim=True).values
    tied = (scores == maxv).to(scores.dtype)
    rank = torch.arange(n, 0, -1, dtype=scores.dtype, device=scores.device)
    return (tied * rank).argmax(dim=-1)


class TexturePriorEncoder(nn.Module):
    def __init__(self, channels: int = 48, memory_size: int = 256, downscale: int = 4):
        super().__init__()
        self.channels = channels
        self.memory_size = memory_size
        self.downscale = downscale
        self.sharp_encoder = TokenEncoder(channels, downscale)
        self.blurry_encoder = TokenEncoder(channels, downscale)
        # zero-mean rows at scale 1/sqrt(L) keep initial attention logits O(1)
        self.memory = nn.Parameter(torch.randn(memory_size, channels) / math.sqrt(channels))
        self.refine = nn.Linear(channels, channels)
        self.calls = 0  # forward-call audit, see the inference contract

    def encode_tokens(self, image: torch.Tensor, branch: str) -> torch.Tensor:
        if branch == "sharp":
            return self.sharp_encoder(image)
        if branch == "blurry":
            return self.blurry_encoder(image)
        raise ConfigError(f"unknown branch {branch!r}")

    def enhance_memory(self, z_s: torch.Tensor) -> torch.Tensor:
        """Tokens (B, C, h, w) -> enhanced memory (B, N, C).

        Each memory row attends over all sharp tokens (softmax along the token
        axis), the attended summary is refined by one affine layer, and the
        memory is modulated elementwise.  The result does not depend on the
        spatial order of the tokens.
        """
        tokens = z_s.flatten(2).transpose(1, 2)  # (B, HW, C)
        logits = torch.matmul(self.memory, tokens.transpose(1, 2))  # (B, N, HW)
        attn = torch.softmax(_check_finite(logits, "memory attention logits"), dim=-1)
        summary = torch.matmul(attn, tokens)  # (B, N, C)
        enhanced = self.memory * self.refine(summary)
        return _check_finite(enhanced, "memory enhancement")

    def transfer_texture(self, z_b: torch.Tensor, enhanced: torch.Tensor):
        """Replace each blurry token with its argmax-matching enhanced row.

        Returns (prior (B, C, h, w), indices (B, h, w)).
        """
        b, c, h, w = z_b.shape
        if enhanced.shape[-1] != c:
            raise DataError(
                f"channel mismatch: tokens {c}, memory {enhanced.shape[-1]}"
            )
        tokens = z_b.flatten(2).transpose(1, 2)  # (B, HW, C)
        scores = torch.matmul(tokens, enhanced.transpose(1, 2))  # (B, HW, N)
        _check_finite(scores, "transfer scores")
        idx = lowest_index_argmax(scores)  # (B, HW)
        hard = torch.take_along_dim(enhanced, idx[:, :, None], dim=1)  # (B, HW, C)
        frozen = enhanced.detach()
        soft = torch.matmul(
            torch.softmax(torch.matmul(tokens, frozen.transpose(1, 2)), dim=-1), frozen
        )
        # parenthesized so the surrogate term is exactly zero in the forward
        # value and the output stays bitwise equal to the selected rows
        z = hard + (soft - soft.detach())
        return z.transpose(1, 2).reshape(b, c, h, w), idx.reshape(b, h, w)

    def forward(self, sharp: torch.Tensor, blurry: torch.Tensor) -> torch.Tensor:
        self.calls += 1
        z_s = self.encode_tokens(sharp, "sharp")
        enhanced = self.enhance_memory(z_s)
        z_b = self.encode_tokens(blurry, "blurry")
        prior, _ = self.transfer_texture(z_b, enhanced)
        return prior


class PlainPriorEncoder(nn.Module):
    """Memory-free stand-in: the blurry tokens themselves act as the prior."""

    def __init__(self, channels: int = 48, memory_size: int = 0, downscale: int = 4):
        super().__init__()
        self.channels = channels
        self.downscale = downscale
        self.blurry_encoder = TokenEncoder(channels, downscale)

    def forward(self, sharp: torch.Tensor, blurry: torch.Tensor) -> torch.Tensor:
        return self.blurry_encoder(blurry)


def make_prior_encoder(config) -> nn.Module:
    cls = PlainPriorEncoder if config["ablation.no_tpe"] else TexturePriorEncoder
    return cls(
        channels=config["prior.channels"],
        memory_size=config["prior.memory_size"],
        downscale=config["prior.downscale"],
    )
