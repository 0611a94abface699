"""Two-stage unpaired training.

Stage one trains the texture encoder and the deblur/reblur cycle against
three discriminators.  Stage two freezes the texture encoder, learns a
conditional sampler that regenerates its prior from noise, and keeps
refining the cycle networks jointly (unless disabled).

Every stochastic draw is keyed off (seed, step), so a run is a pure
function of its config, split and seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, parameter_digest, restore_models, save_checkpoint
from .config import Config
from .data import sample_patch_batch
from .deblurnet import make_deblur_net
from .diffusion import (
    ConditionExtractor,
    denoiser_from_config,
    diffuse,
    reverse_chain,
    schedule_from_config,
)
from .discriminators import make_discriminators
from .errors import NumericalError
from .losses import (
    LossWeights,
    loss_diff,
    loss_gan_and_cycle,
    loss_stage1,
    loss_wave,
    loss_wave_generator,
    lsgan_disc_loss,
)
from .priors import make_prior_encoder
from .reblur import make_reblur_net


@dataclass
class TrainResult:
    checkpoint: Path
    losses_csv: Path
    history: list = field(default_factory=list)

    @property
    def first(self) -> dict:
        return self.history[0]

    @property
    def final(self) -> dict:
        return self.history[-1]


def step_seed(seed: int, step: int, salt: int = 0) -> int:
    """Deterministic per-step (and per-use) stream seed."""
    return (1_000_003 * seed + 7_919 * salt + step) % (2**31 - 1)


def batch_tensors(split, config: Config, seed: int):
    """One (blurry, sharp) patch batch as NCHW float tensors."""
    blurry, sharp = sample_patch_batch(
        split, config["data.patch"], config["data.batch"], config["data.flips"], seed
    )
    as_nchw = lambda a: torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2)))
    return as_nchw(blurry), as_nchw(sharp)


def build_stage1_models(config: Config) -> dict:
    return {
        "tpe": make_prior_encoder(config),
        "deblur": make_deblur_net(config),
        "reblur": make_reblur_net(config),
        "discs": make_discriminators(config),
    }


def build_stage2_models(config: Config) -> dict:
    models = build_stage1_models(config)
    if not config["ablation.no_dm"]:
        models["denoiser"] = denoiser_from_config(config)
        models["cond"] = ConditionExtractor(config["prior.channels"], config["prior.downscale"])
    return models


def _adam(config: Config, params) -> torch.optim.Adam:
    return torch.optim.Adam(
        params, lr=config["train.lr"], betas=(config["train.beta1"], config["train.beta2"])
    )


def _meta(config: Config, seed: int, step: int, stage: int) -> dict:
    return {
        "config": config.to_dict(),
        "seed": seed,
        "step": step,
        "stage": stage,
        "schedule": {
            "steps": config["diffusion.steps"],
            "beta_start": config["diffusion.beta_start"],
            "beta_end": config["diffusion.beta_end"],
        },
    }


def _require_finite(value: torch.Tensor, name: str) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise NumericalError(f"non-finite {name}")
    return value


def _scalar(value: torch.Tensor) -> float:
    return float(value.detach())


def train_stage1(config: Config, split, out_dir, seed: int) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(seed)
    models = build_stage1_models(config)
    tpe, deblur, reblur, discs = (models[k] for k in ("tpe", "deblur", "reblur", "discs"))
    weights = LossWeights.from_config(config)
    use_wave = not config["ablation.no_wave_loss"]
    opt_g = _adam(
        config,
        list(tpe.parameters()) + list(deblur.parameters()) + list(reblur.parameters()),
    )
    opt_d = _adam(config, discs.parameters())

    steps = config["train.stage1_steps"]
    every = config["train.checkpoint_every"]
    csv_path = out_dir / "stage1_losses.csv"
    ckpt_path = out_dir / "stage1.npz"
    history = []
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss_d", "loss_gan", "loss_cyc", "loss_wave", "loss_total"])
        for step in range(1, steps + 1):
            try:
                b, s = batch_tensors(split, config, step_seed(seed, step))
                z = tpe(s, b)
                s_b = deblur(b, z)
                b_s = reblur(s)
                z_cyc = tpe(s_b, b_s)
                s_cyc = deblur(b_s, z_cyc)
                b_cyc = reblur(s_b)

                # discriminators first, on detached fakes
                opt_d.zero_grad()
                d_loss = lsgan_disc_loss(discs.sharp, s, s_b.detach())
                d_loss = d_loss + lsgan_disc_loss(discs.blurry, b, b_s.detach())
                if use_wave:
                    d_loss = d_loss - loss_wave(discs.wave, s, b, lambda _: s_b.detach())
                _require_finite(d_loss, "discriminator loss")
                d_loss.backward()
                opt_d.step()

                # generator side against the updated discriminators
                opt_g.zero_grad()
                l_gan, l_cyc = loss_gan_and_cycle(discs, s, b, s_b, b_s, s_cyc, b_cyc)
                l_wave = (
                    loss_wave_generator(discs.wave, s_b) if use_wave else torch.zeros(())
                )
                total = loss_stage1(l_gan, l_cyc, l_wave, weights)
                _require_finite(total, "total loss")
                total.backward()
                opt_g.step()
            except NumericalError as exc:
                raise NumericalError(f"stage-one step {step}: {exc}") from exc

            row = {
                "step": step,
                "loss_d": _scalar(d_loss),
                "loss_gan": _scalar(l_gan),
                "loss_cyc": _scalar(l_cyc),
                "loss_wave": _scalar(l_wave),
                "loss_total": _scalar(total),
            }
            history.append(row)
            writer.writerow(list(row.values()))
            if every > 0 and step % every == 0 and step != steps:
                save_checkpoint(
                    out_dir / f"stage1_step{step:06d}.npz", models, _meta(config, seed, step, 1)
                )
    save_checkpoint(ckpt_path, models, _meta(config, seed, steps, 1))
    return TrainResult(checkpoint=ckpt_path, losses_csv=csv_path, history=history)


def train_stage2(config: Config, split, out_dir, seed: int, stage1_checkpoint) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(seed)
    models = build_stage1_models(config)
    _, arrays = load_checkpoint(stage1_checkpoint)
    restore_models(models, arrays)
    tpe, deblur, reblur, discs = (models[k] for k in ("tpe", "deblur", "reblur", "discs"))
    tpe.requires_grad_(False)
    frozen_digest = parameter_digest(tpe)

    use_dm = not config["ablation.no_dm"]
    joint = not config["ablation.no_joint_train"]
    use_wave = not config["ablation.no_wave_loss"]
    weights = LossWeights.from_config(config)
    if use_dm:
        sched = schedule_from_config(config)
        denoiser = denoiser_from_config(config)
        cond = ConditionExtractor(config["prior.channels"], config["prior.downscale"])
        models["denoiser"] = denoiser
        models["cond"] = cond
        gen_params = list(denoiser.parameters()) + list(cond.parameters())
    else:
        gen_params = []
    if joint or not use_dm:
        gen_params += list(deblur.parameters()) + list(reblur.parameters())
    opt_g = _adam(config, gen_params)
    opt_d = _adam(config, discs.parameters())
    update_cycle = joint or not use_dm

    def sample_prior(z_target: torch.Tensor, image: torch.Tensor, step: int, salt: int):
        """Diffuse the target prior, then run the full reverse chain on the
        image-conditioned stream; gradients flow through the last step only."""
        z_T = diffuse(z_target, sched, step_seed(seed, step, salt))
        c = cond(image)
        return reverse_chain(
            z_T, c, sched, denoiser, step_seed(seed, step, salt + 1), grad_final_only=True
        )

    steps = config["train.stage2_steps"]
    every = config["train.checkpoint_every"]
    csv_path = out_dir / "stage2_losses.csv"
    ckpt_path = out_dir / "stage2.npz"
    history = []
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step", "loss_d", "loss_gan", "loss_cyc", "loss_wave", "loss_diff", "loss_total"]
        )
        for step in range(1, steps + 1):
            try:
                b, s = batch_tensors(split, config, step_seed(seed, step))
                with torch.no_grad():
                    z = tpe(s, b)
                if use_dm:
                    z_hat = sample_prior(z, b, step, salt=1)
                else:
                    z_hat = z
                cycle_grad = torch.enable_grad() if update_cycle else torch.no_grad()
                with cycle_grad:
                    s_b = deblur(b, z_hat)
                    b_s = reblur(s)
                with torch.no_grad():
                    z_cyc = tpe(s_b, b_s)
                if use_dm:
                    z_hat_cyc = sample_prior(z_cyc, b_s, step, salt=3)
                else:
                    z_hat_cyc = z_cyc
                with cycle_grad:
                    s_cyc = deblur(b_s, z_hat_cyc)
                    b_cyc = reblur(s_b)

                if update_cycle:
                    opt_d.zero_grad()
                    d_loss = lsgan_disc_loss(discs.sharp, s, s_b.detach())
                    d_loss = d_loss + lsgan_disc_loss(discs.blurry, b, b_s.detach())
                    if use_wave:
                        d_loss = d_loss - loss_wave(discs.wave, s, b, lambda _: s_b.detach())
                    _require_finite(d_loss, "discriminator loss")
                    d_loss.backward()
                    opt_d.step()
                else:
                    d_loss = torch.zeros(())

                opt_g.zero_grad()
                if update_cycle:
                    l_gan, l_cyc = loss_gan_and_cycle(discs, s, b, s_b, b_s, s_cyc, b_cyc)
                    l_wave = (
                        loss_wave_generator(discs.wave, s_b) if use_wave else torch.zeros(())
                    )
                    stage1_value = loss_stage1(l_gan, l_cyc, l_wave, weights)
                else:
                    l_gan = l_cyc = l_wave = stage1_value = torch.zeros(())
                if use_dm:
                    l_diff = loss_diff(
                        torch.cat([z, z_cyc]), torch.cat([z_hat, z_hat_cyc])
                    )
                else:
                    l_diff = torch.zeros(())
                total = stage1_value + weights.diff * l_diff
                _require_finite(total, "total loss")
                total.backward()
                opt_g.step()
            except NumericalError as exc:
                raise NumericalError(f"stage-two step {step}: {exc}") from exc

            row = {
                "step": step,
                "loss_d": _scalar(d_loss),
                "loss_gan": _scalar(l_gan),
                "loss_cyc": _scalar(l_cyc),
                "loss_wave": _scalar(l_wave),
                "loss_diff": _scalar(l_diff),
                "loss_total": _scalar(total),
            }
            history.append(row)
            writer.writerow(list(row.values()))
            if every > 0 and step % every == 0 and step != steps:
                meta = _meta(config, seed, step, 2)
                meta["frozen"] = ["tpe"]
                save_checkpoint(out_dir / f"stage2_step{step:06d}.npz", models, meta)

    if parameter_digest(tpe) != frozen_digest:
        raise RuntimeError("frozen texture encoder changed during stage two")
    meta = _meta(config, seed, steps, 2)
    meta["frozen"] = ["tpe"]
    save_checkpoint(ckpt_path, models, meta)
    return TrainResult(checkpoint=ckpt_path, losses_csv=csv_path, history=history)
