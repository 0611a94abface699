"""Conditional denoising diffusion over the texture prior.

The forward process jumps straight to step T: z_T = sqrt(abar_T) z +
sqrt(1 - abar_T) eps.  The reverse process runs T explicit steps, each
subtracting the predicted noise and, except at the final step, re-injecting
fresh Gaussian noise.  The denoiser is a small stack of residual blocks with
the condition fused by concatenation and a learned additive timestep
embedding.  For training, gradients can be restricted to the final reverse
step (earlier steps treated as constants) to keep the chain cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DataError, NumericalError
from .priors import TokenEncoder

ConditionExtractor = TokenEncoder  # condition c mirrors the prior's geometry


@dataclass
class DiffusionSchedule:
    beta: torch.Tensor  # (T,)
    alpha: torch.Tensor = field(init=False)
    alpha_bar: torch.Tensor = field(init=False)

    def __post_init__(self):
        self.beta = torch.as_tensor(self.beta, dtype=torch.float64)
        self.alpha = 1.0 - self.beta
        self.alpha_bar = torch.cumprod(self.alpha, dim=0)

    @property
    def steps(self) -> int:
        return int(self.beta.shape[0])


def make_schedule(steps: int, beta_start: float, beta_end: float) -> DiffusionSchedule:
    """Linear beta schedule; betas must lie strictly inside (0, 1)."""
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"betas must satisfy 0 < start <= end < 1, got {beta_start}, {beta_end}"
        )
    beta = torch.linspace(beta_start, beta_end, steps, dtype=torch.float64)
    return DiffusionSchedule(beta)


def schedule_from_config(config) -> DiffusionSchedule:
    return make_schedule(
        config["diffusion.steps"],
        config["diffusion.beta_start"],
        config["diffusion.beta_end"],
    )


def diffuse(z: torch.Tensor, sched: DiffusionSchedule, seed: int) -> torch.Tensor:
    """Sample z_T ~ N(sqrt(abar_T) z, (1 - abar_T) I)."""
    abar = float(sched.alpha_bar[-1])
    g = torch.Generator().manual_seed(seed)
    noise = torch.randn(z.shape, generator=g, dtype=z.dtype, device=z.device)
    return (abar**0.5) * z + ((1.0 - abar) ** 0.5) * noise


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.mix = nn.Conv2d(channels, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.mix(F.gelu(self.conv(x))) + x


class Denoiser(nn.Module):
    """Noise predictor eps(z_t, c, t); counts its forward calls for audits.

    Built with a schedule, the prediction is anchored at the zero-signal
    estimate z_t / sqrt(1 - abar_t) and the convolutional stack learns the
    residual around it.  The anchor keeps an untrained reverse chain
    contractive; without it each step divides by sqrt(alpha_t) and eight
    steps amplify pure noise by 1/sqrt(abar_T), far outside the range the
    restorer was trained on.  Without a schedule the prediction is the raw
    head output.
    """

    def __init__(
        self,
        channels: int = 48,
        steps: int = 8,
        blocks: int = 5,
        sched: DiffusionSchedule | None = None,
    ):
        super().__init__()
        if sched is not None and sched.steps != steps:
            raise ConfigError(f"schedule has {sched.steps} steps, denoiser expects {steps}")
        self.steps = steps
        self.fuse = nn.Conv2d(2 * channels, channels, 1)
        self.embed = nn.Parameter(torch.zeros(steps, channels))
        self.blocks = nn.ModuleList(ResBlock(channels) for _ in range(blocks))
        self.head = nn.Conv2d(channels, channels, 1)
        anchor = torch.zeros(steps) if sched is None else (1.0 - sched.alpha_bar).rsqrt()
        self.register_buffer("anchor_scale", anchor.to(torch.float32))
        self.calls = 0

    def forward(self, z_t: torch.Tensor, c: torch.Tensor, t: int) -> torch.Tensor:
        if z_t.shape != c.shape:
            raise DataError(f"shape mismatch: z_t {tuple(z_t.shape)} vs c {tuple(c.shape)}")
        if not 1 <= t <= self.steps:
            raise DataError(f"timestep {t} outside [1, {self.steps}]")
        self.calls += 1
        x = self.fuse(torch.cat([z_t, c], dim=1))
        x = x + self.embed[t - 1].to(x.dtype).view(1, -1, 1, 1)
        for block in self.blocks:
            x = block(x)
        return self.head(x) + self.anchor_scale[t - 1].to(z_t.dtype) * z_t


def denoiser_from_config(config) -> Denoiser:
    return Denoiser(
        channels=config["prior.channels"],
        steps=config["diffusion.steps"],
        blocks=config["diffusion.resblocks"],
        sched=schedule_from_config(config),
    )


def denoise_step(
    z_t: torch.Tensor,
    c: torch.Tensor,
    t: int,
    sched: DiffusionSchedule,
    denoiser,
    seed: int | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """One reverse step from z_t to z_{t-1}.

    Fresh noise is added at every step except the final one (t=1), which
    keeps the produced prior deterministic given its inputs.
    """
    if not 1 <= t <= sched.steps:
        raise DataError(f"timestep {t} outside [1, {sched.steps}]")
    alpha_t = float(sched.alpha[t - 1])
    abar_t = float(sched.alpha_bar[t - 1])
    if abar_t >= 1.0:
        raise NumericalError(f"alpha_bar at step {t} equals 1, denoising undefined")
    eps_hat = denoiser(z_t, c, t)
    mean = (z_t - (1.0 - alpha_t) / ((1.0 - abar_t) ** 0.5) * eps_hat) / (alpha_t**0.5)
    if t == 1:
        return mean
    if generator is None:
        generator = torch.Generator().manual_seed(0 if seed is None else seed)
    noise = torch.randn(z_t.shape, generator=generator, dtype=z_t.dtype, device=z_t.device)
    return mean + ((1.0 - alpha_t) ** 0.5) * noise


def reverse_chain(
    z_T: torch.Tensor,
    c: torch.Tensor,
    sched: DiffusionSchedule,
    denoiser,
    seed: int,
    grad_final_only: bool = False,
) -> torch.Tensor:
    """Run all T reverse steps starting from the given z_T."""
    g = torch.Generator().manual_seed(seed)
    z = z_T
    for t in range(sched.steps, 1, -1):
        if grad_final_only:
            with torch.no_grad():
                z = denoise_step(z, c, t, sched, denoiser, generator=g)
        else:
            z = denoise_step(z, c, t, sched, denoiser, generator=g)
    if grad_final_only:
        z = z.detach()
    return denoise_step(z, c, 1, sched, denoiser, generator=g)


def generate_prior(
    c: torch.Tensor,
    sched: DiffusionSchedule,
    denoiser,
    seed: int,
    grad_final_only: bool = False,
) -> torch.Tensor:
    """Sample a prior from pure noise, conditioned on c."""
    g = torch.Generator().manual_seed(seed)
    z_T = torch.randn(c.shape, generator=g, dtype=c.dtype, device=c.device)
    return reverse_chain(z_T, c, sched, denoiser, seed + 1, grad_final_only)
