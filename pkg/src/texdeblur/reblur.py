"""Sharp-to-blurry translation network, used during training only.

A plain U-Net of residual conv blocks: three stride-2 downsamples, mirrored
nearest-neighbor upsamples with concatenated skips.  Output is input plus a
residual, clamped to [0, 1].  The residual starts as a fixed binomial-minus
-identity term (a weak blur), refined by the zero-initialized learned head:
an untrained net already maps toward the blurry domain, so the cycle pairs
carry a deblurring signal from the first training step instead of collapsing
onto the identity.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DataError


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.GELU(),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x) + x


class ReblurNet(nn.Module):
    def __init__(self, base_channels: int = 48):
        super().__init__()
        widths = [base_channels * m for m in (1, 2, 4, 8)]
        self.stem = nn.Conv2d(3, widths[0], 3, padding=1)
        self.encoder = nn.ModuleList(ResBlock(widths[i]) for i in range(3))
        self.down = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1) for i in range(3)
        )
        self.bottleneck = ResBlock(widths[3])
        self.up = nn.ModuleList(
            nn.Conv2d(widths[i + 1], widths[i], 3, padding=1) for i in range(3)
        )
        self.fuse = nn.ModuleList(
            nn.Conv2d(2 * widths[i], widths[i], 1) for i in range(3)
        )
        self.decoder = nn.ModuleList(ResBlock(widths[i]) for i in range(3))
        self.head = nn.Conv2d(widths[0], 3, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        # zero-sum base residual: binomial smoothing minus the center tap
        base = torch.tensor([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0
        base[1, 1] -= 1.0
        self.register_buffer("base_kernel", base.view(1, 1, 3, 3).expand(3, 1, 3, 3).clone())
        self.calls = 0  # forward-call audit, see the inference contract

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        if h % 8 or w % 8:
            raise DataError(f"spatial dims {h}x{w} must be divisible by 8")
        self.calls += 1
        f = self.stem(x)
        skips = []
        for i in range(3):
            f = self.encoder[i](f)
            skips.append(f)
            f = self.down[i](f)
        f = self.bottleneck(f)
        for i in reversed(range(3)):
            f = self.up[i](F.interpolate(f, scale_factor=2, mode="nearest"))
            f = self.fuse[i](torch.cat([f, skips[i]], dim=1))
            f = self.decoder[i](f)
        base = F.conv2d(F.pad(x, (1, 1, 1, 1), mode="reflect"), self.base_kernel, groups=3)
        return torch.clamp(x + base + self.head(f), 0.0, 1.0)


def make_reblur_net(config) -> ReblurNet:
    return ReblurNet(base_channels=config["reblur.base_channels"])
