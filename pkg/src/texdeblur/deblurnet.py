"""Four-scale U-shaped deblurring network with prior-modulated transformers.

Each scale stacks transformer layers whose attention and feed-forward parts
are both modulated by the texture prior: the attention applies a per-pixel
adaptive filter (offsets + tap weights predicted from the prior) before
building a transposed (channel-by-channel) attention map, and the
feed-forward gate is scaled and shifted by prior-predicted maps.  The prior
reaches every scale through adaptive average pooling plus a 1x1 projection.
The network predicts a residual added to its input, clamped to [0, 1]; the
residual head is zero-initialized so an untrained model is the identity.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DataError, NumericalError


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel vector of every spatial position."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.LayerNorm(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class PDConv(nn.Module):
    """1x1 pointwise projection followed by a 3x3 depthwise convolution."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.point = nn.Conv2d(in_channels, out_channels, 1)
        self.depth = nn.Conv2d(out_channels, out_channels, 3, padding=1, groups=out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.depth(self.point(x))


class PriorPredictor(nn.Module):
    """Three-layer conv stack mapping a prior feature to a modulation field."""

    def __init__(self, in_channels: int, width: int, out_channels: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, width, 1),
            nn.GELU(),
            nn.Conv2d(width, width, 3, padding=1, groups=width),
            nn.GELU(),
            nn.Conv2d(width, out_channels, 1),
        )

    def forward(self, z_k: torch.Tensor) -> torch.Tensor:
        return self.net(z_k)


def adaptive_filter(feature: torch.Tensor, offsets: torch.Tensor, weights: torch.Tensor, kernel_size: int) -> torch.Tensor:
    """Per-pixel filtering with learned fractional tap positions.

    ``offsets`` carries K*K vertical offsets then K*K horizontal offsets
    (pixel units) added to the regular KxK tap grid around each position;
    taps are read with bilinear interpolation, zero outside the borders, and
    combined with the per-pixel ``weights``.
    """
    b, c, h, w = feature.shape
    k2 = kernel_size * kernel_size
    if offsets.shape[1] != 2 * k2 or weights.shape[1] != k2:
        raise DataError(
            f"filter field channels {offsets.shape[1]}/{weights.shape[1]} "
            f"do not match kernel size {kernel_size}"
        )
    if offsets.shape[-2:] != (h, w) or weights.shape[-2:] != (h, w):
        raise DataError("filter field spatial shape does not match the feature")
    if h < 2 or w < 2:
        raise DataError(f"feature {h}x{w} too small for adaptive filtering")
    if not torch.isfinite(offsets).all():
        raise NumericalError("non-finite adaptive filter offsets")

    dtype = feature.dtype
    device = feature.device
    ys = torch.arange(h, dtype=dtype, device=device).view(1, 1, h, 1)
    xs = torch.arange(w, dtype=dtype, device=device).view(1, 1, 1, w)
    r = kernel_size // 2
    taps = torch.arange(k2, device=device)
    dy_base = (torch.div(taps, kernel_size, rounding_mode="floor") - r).to(dtype)
    dx_base = (taps % kernel_size - r).to(dtype)
    py = ys + dy_base.view(1, k2, 1, 1) + offsets[:, :k2]  # (B, K2, H, W)
    px = xs + dx_base.view(1, k2, 1, 1) + offsets[:, k2:]
    # pixel coordinates in the [-1, 1] convention of grid_sample
    gy = 2.0 * py / (h - 1) - 1.0
    gx = 2.0 * px / (w - 1) - 1.0
    grid = torch.stack([gx, gy], dim=-1).view(b, k2 * h, w, 2)
    sampled = F.grid_sample(
        feature, grid, mode="bilinear", padding_mode="zeros", align_corners=True
    )
    return (sampled.view(b, c, k2, h, w) * weights.unsqueeze(1)).sum(dim=2)


class FilterModulatedAttention(nn.Module):
    """Transposed self-attention whose keys/values come from a prior-steered
    adaptive filtering of the normalized feature."""

    def __init__(self, channels: int, heads: int, kernel_size: int, predictor_width: int):
        super().__init__()
        if channels % heads:
            raise ConfigError(f"heads {heads} must divide channels {channels}")
        self.channels = channels
        self.heads = heads
        self.kernel_size = kernel_size
        k2 = kernel_size * kernel_size
        self.norm = ChannelLayerNorm(channels)
        self.offset_pred = PriorPredictor(channels, predictor_width, 2 * k2)
        self.weight_pred = PriorPredictor(channels, predictor_width, k2)
        self.q_proj = PDConv(channels, channels)
        self.k_proj = PDConv(channels, channels)
        self.v_proj = PDConv(channels, channels)
        self.out_proj = nn.Conv2d(channels, channels, 1)
        # start at the exact tap grid with all weight on the center tap, so the
        # filtered stream equals the normalized feature instead of a random
        # attenuated mixture that starves the keys and values
        for pred in (self.offset_pred, self.weight_pred):
            nn.init.zeros_(pred.net[-1].weight)
            nn.init.zeros_(pred.net[-1].bias)
        with torch.no_grad():
            self.weight_pred.net[-1].bias[k2 // 2] = 1.0

    def attention_map(self, q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
        b, c, h, w = q.shape
        hd = self.heads
        qh = q.view(b, hd, c // hd, h * w)
        kh = k.view(b, hd, c // hd, h * w)
        logits = torch.matmul(qh, kh.transpose(-1, -2)) / (self.channels**0.5)
        return torch.softmax(logits, dim=-1)  # (B, heads, C', C')

    def forward(self, x: torch.Tensor, z_k: torch.Tensor) -> torch.Tensor:
        if z_k.shape[-2:] != x.shape[-2:]:
            raise DataError(
                f"prior spatial shape {tuple(z_k.shape[-2:])} does not match "
                f"feature {tuple(x.shape[-2:])}"
            )
        b, c, h, w = x.shape
        fn = self.norm(x)
        filtered = adaptive_filter(
            fn, self.offset_pred(z_k), self.weight_pred(z_k), self.kernel_size
        )
        q = self.q_proj(fn)
        k = self.k_proj(filtered)
        v = self.v_proj(filtered)
        attn = self.attention_map(q, k)
        vh = v.view(b, self.heads, c // self.heads, h * w)
        mixed = torch.matmul(attn, vh).view(b, c, h, w)
        return self.out_proj(mixed) + x


class ModulatedGatedFFN(nn.Module):
    """Gated feed-forward whose input is scaled/shifted by prior predictions."""

    def __init__(self, channels: int, expansion: float, predictor_width: int):
        super().__init__()
        hidden = max(int(round(channels * expansion)), 1)
        self.norm = ChannelLayerNorm(channels)
        self.scale_pred = PriorPredictor(channels, predictor_width, channels)
        self.shift_pred = PriorPredictor(channels, predictor_width, channels)
        self.gate_branch = PDConv(channels, hidden)
        self.value_branch = PDConv(channels, hidden)
        self.out_proj = nn.Conv2d(hidden, channels, 1)
        # identity modulation at the start: scale one, shift zero
        for pred, fill in ((self.scale_pred, 1.0), (self.shift_pred, 0.0)):
            nn.init.zeros_(pred.net[-1].weight)
            nn.init.constant_(pred.net[-1].bias, fill)

    def forward(self, x: torch.Tensor, z_k: torch.Tensor) -> torch.Tensor:
        if z_k.shape[-2:] != x.shape[-2:]:
            raise DataError("prior spatial shape does not match the feature")
        modulated = self.norm(x) * self.scale_pred(z_k) + self.shift_pred(z_k)
        gated = F.gelu(self.gate_branch(modulated)) * self.value_branch(modulated)
        return self.out_proj(gated) + x


class TTBlock(nn.Module):
    def __init__(self, channels: int, heads: int, kernel_size: int, expansion: float, predictor_width: int):
        super().__init__()
        self.attn = FilterModulatedAttention(channels, heads, kernel_size, predictor_width)
        self.ffn = ModulatedGatedFFN(channels, expansion, predictor_width)

    def forward(self, x: torch.Tensor, z_k: torch.Tensor) -> torch.Tensor:
        return self.ffn(self.attn(x, z_k), z_k)


class PlainConvBlock(nn.Module):
    """Prior-agnostic residual conv block used by the transformer ablation."""

    def __init__(self, channels: int, *_args):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.GELU(),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, x: torch.Tensor, z_k: torch.Tensor) -> torch.Tensor:
        return self.body(x) + x


class ScalePriorProjector(nn.Module):
    """Pool the prior to a scale's spatial size and project its channels."""

    def __init__(self, prior_channels: int, out_channels: int):
        super().__init__()
        self.proj = nn.Conv2d(prior_channels, out_channels, 1)

    def forward(self, z: torch.Tensor, size) -> torch.Tensor:
        pooled = z if tuple(z.shape[-2:]) == tuple(size) else F.adaptive_avg_pool2d(z, size)
        return self.proj(pooled)


class DeblurNet(nn.Module):
    def __init__(
        self,
        base_channels: int = 48,
        blocks=(4, 6, 6, 4),
        heads=(1, 2, 4, 8),
        kernel_size: int = 5,
        prior_channels: int = 48,
        ffn_expansion: float = 1.0,
        predictor_width: int = 32,
        use_transformer: bool = True,
        multi_scale_prior: bool = True,
    ):
        super().__init__()
        if len(blocks) != 4 or len(heads) != 4:
            raise ConfigError("blocks and heads must list exactly 4 scales")
        if kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {kernel_size}")
        self.multi_scale_prior = multi_scale_prior
        widths = [base_channels * m for m in (1, 2, 4, 8)]
        self.widths = widths

        def make_blocks(scale: int) -> nn.ModuleList:
            cls = TTBlock if use_transformer else PlainConvBlock
            return nn.ModuleList(
                cls(widths[scale], heads[scale], kernel_size, ffn_expansion, predictor_width)
                for _ in range(blocks[scale])
            )

        self.stem = nn.Conv2d(3, widths[0], 3, padding=1)
        self.encoder = nn.ModuleList(make_blocks(i) for i in range(3))
        self.down = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1) for i in range(3)
        )
        self.bottleneck = make_blocks(3)
        self.up = nn.ModuleList(
            nn.Conv2d(widths[i + 1], widths[i], 3, padding=1) for i in range(3)
        )
        self.fuse = nn.ModuleList(
            nn.Conv2d(2 * widths[i], widths[i], 1) for i in range(3)
        )
        self.decoder = nn.ModuleList(make_blocks(i) for i in range(3))
        self.sap = nn.ModuleList(
            ScalePriorProjector(prior_channels, widths[i]) for i in range(4)
        )
        self.head = nn.Conv2d(widths[0], 3, 3, padding=1)
        # zero-mean taps: the residual starts as a faint random high-pass map,
        # so the refinement path carries gradient from the first step without
        # a zero-init head gating the whole trunk behind it
        nn.init.zeros_(self.head.bias)
        with torch.no_grad():
            self.head.weight -= self.head.weight.mean(dim=(2, 3), keepdim=True)

    def scale_priors(self, z: torch.Tensor, sizes) -> list:
        """Prior feature per scale; zeros except the coarsest when the
        multi-scale injection is ablated."""
        feats = []
        for i, size in enumerate(sizes):
            if self.multi_scale_prior or i == 3:
                feats.append(self.sap[i](z, size))
            else:
                b = z.shape[0]
                feats.append(z.new_zeros((b, self.widths[i], size[0], size[1])))
        return feats

    def forward(self, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        if h % 8 or w % 8:
            raise DataError(f"spatial dims {h}x{w} must be divisible by 8")
        sizes = [(h >> i, w >> i) for i in range(4)]
        priors = self.scale_priors(z, sizes)

        f = self.stem(x)
        skips = []
        for i in range(3):
            for block in self.encoder[i]:
                f = block(f, priors[i])
            skips.append(f)
            f = self.down[i](f)
        for block in self.bottleneck:
            f = block(f, priors[3])
        for i in reversed(range(3)):
            f = self.up[i](F.interpolate(f, scale_factor=2, mode="nearest"))
            f = self.fuse[i](torch.cat([f, skips[i]], dim=1))
            for block in self.decoder[i]:
                f = block(f, priors[i])
        residual = self.head(f)
        return torch.clamp(x + residual, 0.0, 1.0)


def make_deblur_net(config) -> DeblurNet:
    return DeblurNet(
        base_channels=config["deblur.base_channels"],
        blocks=config["deblur.blocks"],
        heads=config["deblur.heads"],
        kernel_size=config["deblur.kernel_size"],
        prior_channels=config["prior.channels"],
        ffn_expansion=config["deblur.ffn_expansion"],
        predictor_width=config["deblur.predictor_width"],
        use_transformer=not config["ablation.no_ttformer"],
        multi_scale_prior=not config["ablation.no_multi_scale"],
    )


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
