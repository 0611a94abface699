"""Loss terms for the two training stages.

Stage one combines least-squares adversarial terms for both translation
directions, an L1 cycle consistency term, and a wavelet-band adversarial
term whose discriminator side is the log-likelihood objective itself (its
supremum is 0) and whose generator side is the non-saturating counterpart.
Stage two adds the L1 distance between the encoder prior and the prior
reconstructed by the diffusion model.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .discriminators import wave_features
from .errors import ConfigError, DataError, NumericalError

LOG_CLAMP = 1e-12


@dataclass
class LossWeights:
    gan: float = 1.0
    cyc: float = 0.1
    wave: float = 0.2
    diff: float = 1.0

    def validate(self) -> "LossWeights":
        for name in ("gan", "cyc", "wave", "diff"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be nonnegative")
        return self

    @classmethod
    def from_config(cls, config) -> "LossWeights":
        return cls(
            gan=config["loss.gan"],
            cyc=config["loss.cyc"],
            wave=config["loss.wave"],
            diff=config["loss.diff"],
        ).validate()


def _check_finite(value: torch.Tensor, name: str) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise NumericalError(f"non-finite {name}")
    return value


def _clamped_log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp_min(LOG_CLAMP))


def loss_wave(d_wave, sharp: torch.Tensor, blurry: torch.Tensor, deblur_fn) -> torch.Tensor:
    """Discriminator objective on high-frequency bands (supremum 0).

    E[log D(bands(s))] + E[log(1 - D(bands(deblur(b))))], logs clamped so an
    exactly saturated discriminator stays finite.
    """
    real = d_wave(wave_features(sharp))
    fake = d_wave(wave_features(deblur_fn(blurry)))
    value = _clamped_log(real).mean() + _clamped_log(1.0 - fake).mean()
    return _check_finite(value, "wavelet adversarial loss")


def loss_wave_generator(d_wave, deblurred: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator side: push deblurred bands toward 'real'."""
    fake = d_wave(wave_features(deblurred))
    return _check_finite(-_clamped_log(fake).mean(), "wavelet generator loss")


def lsgan_disc_loss(disc, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """Least-squares: real toward 1, fake toward 0."""
    return ((disc(real) - 1.0) ** 2).mean() + (disc(fake) ** 2).mean()


def loss_gan_and_cycle(discs, s, b, s_b, b_s, s_cyc, b_cyc):
    """Generator-side adversarial terms plus L1 cycle consistency.

    s_b = deblur(b) should fool the sharp discriminator, b_s = reblur(s) the
    blurry one; s_cyc and b_cyc are the round-trip reconstructions of s and b.
    """
    for name, x in (("s_b", s_b), ("b_s", b_s), ("s_cyc", s_cyc), ("b_cyc", b_cyc)):
        if x.shape != s.shape:
            raise DataError(f"{name} shape {tuple(x.shape)} does not match {tuple(s.shape)}")
    l_gan = ((discs.sharp(s_b) - 1.0) ** 2).mean() + ((discs.blurry(b_s) - 1.0) ** 2).mean()
    l_cyc = (s_cyc - s).abs().mean() + (b_cyc - b).abs().mean()
    return _check_finite(l_gan, "adversarial loss"), _check_finite(l_cyc, "cycle loss")


def loss_stage1(l_gan, l_cyc, l_wave, weights: LossWeights):
    return weights.gan * l_gan + weights.cyc * l_cyc + weights.wave * l_wave


def loss_diff(z: torch.Tensor, z_hat: torch.Tensor) -> torch.Tensor:
    if z.shape != z_hat.shape:
        raise DataError(f"prior shapes differ: {tuple(z.shape)} vs {tuple(z_hat.shape)}")
    return (z - z_hat).abs().mean()


def loss_stage2(stage1_value, z: torch.Tensor, z_hat: torch.Tensor, weights: LossWeights):
    return stage1_value + weights.diff * loss_diff(z, z_hat)
