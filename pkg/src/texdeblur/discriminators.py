"""Patch discriminators for the sharp, blurry, and wavelet-band domains.

Four stride-2 conv layers with LeakyReLU, then a 1x1 head producing a patch
score map.  The two image-domain discriminators keep a linear head (their
loss is least-squares); the wavelet discriminator ends in a sigmoid because
its loss takes logs of probabilities.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .wavelet import dwt_high_freq


class PatchDiscriminator(nn.Module):
    def __init__(self, in_channels: int = 3, base_channels: int = 64, sigmoid_head: bool = False):
        super().__init__()
        widths = [base_channels * m for m in (1, 2, 4, 8)]
        layers = []
        prev = in_channels
        for wd in widths:
            layers += [nn.Conv2d(prev, wd, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            prev = wd
        layers.append(nn.Conv2d(prev, 1, 1))
        if sigmoid_head:
            layers.append(nn.Sigmoid())
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def wave_features(x: torch.Tensor) -> torch.Tensor:
    """Concatenated (LH, HL, HH) high-frequency bands at half resolution."""
    lh, hl, hh = dwt_high_freq(x)
    return torch.cat([lh, hl, hh], dim=1)


class Discriminators(nn.Module):
    """D_sharp and D_blurry judge images; D_wave judges wavelet bands."""

    def __init__(self, base_channels: int = 64, image_channels: int = 3):
        super().__init__()
        self.sharp = PatchDiscriminator(image_channels, base_channels)
        self.blurry = PatchDiscriminator(image_channels, base_channels)
        self.wave = PatchDiscriminator(3 * image_channels, base_channels, sigmoid_head=True)


def make_discriminators(config) -> Discriminators:
    return Discriminators(base_channels=config["disc.base_channels"])
