"""Checkpoint-driven restoration and paired evaluation.

Test-time restoration needs only the deblurring network plus the
conditional prior sampler: the condition comes from the blurry input, the
prior is drawn from pure noise, and neither the texture encoder nor the
reblurring network is ever constructed here.
"""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np
import torch

from .checkpoint import load_checkpoint, restore_models
from .config import Config
from .data import load_image, read_manifest, save_image
from .deblurnet import make_deblur_net
from .diffusion import ConditionExtractor, denoiser_from_config, generate_prior, schedule_from_config
from .errors import DataError, NumericalError
from .metrics import psnr, ssim
from .training import step_seed


@dataclass
class InferenceRuntime:
    """Everything restoration needs, restored from one checkpoint."""

    config: Config
    meta: dict
    deblur: torch.nn.Module
    denoiser: torch.nn.Module | None
    cond: torch.nn.Module | None
    schedule: object | None


def build_runtime(checkpoint_path) -> InferenceRuntime:
    meta, arrays = load_checkpoint(checkpoint_path)
    config = Config(meta["config"])
    torch.manual_seed(0)  # construction-time draws are overwritten by the restore
    models = {"deblur": make_deblur_net(config)}
    if config["ablation.no_dm"]:
        denoiser = cond = schedule = None
    else:
        denoiser = denoiser_from_config(config)
        cond = ConditionExtractor(config["prior.channels"], config["prior.downscale"])
        schedule = schedule_from_config(config)
        models["denoiser"] = denoiser
        models["cond"] = cond
    restore_models(models, arrays)
    runtime = InferenceRuntime(config, meta, models["deblur"], denoiser, cond, schedule)
    runtime.deblur.eval()
    if denoiser is not None:
        denoiser.eval()
        cond.eval()
    return runtime


def restore_image(runtime: InferenceRuntime, image: np.ndarray, seed: int) -> np.ndarray:
    """Deblur one HWC float image; a pure function of (image, checkpoint, seed)."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"expected an HWC color image, got shape {tuple(image.shape)}")
    x = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32))
    x = x.unsqueeze(0)
    with torch.no_grad():
        if runtime.denoiser is None:
            ds = runtime.config["prior.downscale"]
            h, w = x.shape[-2:]
            if h % ds or w % ds:
                raise DataError(f"image {h}x{w} not divisible by prior downscale {ds}")
            z = torch.zeros(1, runtime.config["prior.channels"], h // ds, w // ds)
        else:
            c = runtime.cond(x)
            z = generate_prior(c, runtime.schedule, runtime.denoiser, seed)
        y = runtime.deblur(x, z)
    if not torch.isfinite(y).all():
        raise NumericalError("non-finite restoration output")
    return np.ascontiguousarray(y.squeeze(0).numpy().transpose(1, 2, 0))


def infer_file(checkpoint_path, input_path, output_path, seed: int) -> Path:
    runtime = build_runtime(checkpoint_path)
    image = load_image(input_path)
    restored = restore_image(runtime, image, seed)
    output_path = Path(output_path)
    save_image(output_path, restored)
    return output_path


REPORT_SCHEMA = {
    "type": "object",
    "required": [
        "checkpoint",
        "config_digest",
        "seed",
        "n_images",
        "n_skipped",
        "skipped",
        "blurry",
        "restored",
        "gain",
    ],
    "additionalProperties": False,
    "properties": {
        "checkpoint": {"type": "string"},
        "config_digest": {"type": "string"},
        "seed": {"type": "integer"},
        "n_images": {"type": "integer", "minimum": 1},
        "n_skipped": {"type": "integer", "minimum": 0},
        "skipped": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["scene_id", "reason"],
                "properties": {
                    "scene_id": {"type": "string"},
                    "reason": {"type": "string"},
                },
            },
        },
        "blurry": {"$ref": "#/$defs/stats"},
        "restored": {"$ref": "#/$defs/stats"},
        "gain": {
            "type": "object",
            "required": ["psnr_mean", "psnr_median", "ssim_mean"],
            "properties": {
                "psnr_mean": {"type": "number"},
                "psnr_median": {"type": "number"},
                "ssim_mean": {"type": "number"},
            },
        },
    },
    "$defs": {
        "stats": {
            "type": "object",
            "required": ["psnr_mean", "psnr_median", "ssim_mean", "ssim_median"],
            "properties": {
                "psnr_mean": {"type": "number"},
                "psnr_median": {"type": "number"},
                "ssim_mean": {"type": "number", "minimum": -1.0, "maximum": 1.0},
                "ssim_median": {"type": "number", "minimum": -1.0, "maximum": 1.0},
            },
        }
    },
}

CSV_COLUMNS = ["scene_id", "psnr_blurry", "psnr_restored", "ssim_blurry", "ssim_restored"]


def evaluate(checkpoint_path, corpus_dir, manifest_path, out_dir, seed: int) -> dict:
    """Score a paired manifest; write report.json and per-image metrics.csv."""
    runtime = build_runtime(checkpoint_path)
    corpus = Path(corpus_dir)
    records = read_manifest(manifest_path)
    if not records:
        raise DataError(f"evaluation manifest {manifest_path} is empty")
    records = sorted(records, key=lambda r: r.get("scene_id", ""))

    rows = []
    skipped = []
    for i, rec in enumerate(records):
        scene = str(rec.get("scene_id", f"record{i}"))
        try:
            blurry = load_image(corpus / rec["blurry"])
            sharp = load_image(corpus / rec["sharp"])
            restored = restore_image(runtime, blurry, step_seed(seed, i))
            rows.append(
                {
                    "scene_id": scene,
                    "psnr_blurry": psnr(sharp, blurry),
                    "psnr_restored": psnr(sharp, restored),
                    "ssim_blurry": ssim(sharp, blurry),
                    "ssim_restored": ssim(sharp, restored),
                }
            )
        except (OSError, KeyError, DataError) as exc:
            skipped.append({"scene_id": scene, "reason": str(exc)})
    if len(skipped) > 0.1 * len(records):
        raise DataError(
            f"skipped {len(skipped)} of {len(records)} evaluation images, data unusable"
        )

    def stats(key_psnr: str, key_ssim: str) -> dict:
        p = [r[key_psnr] for r in rows]
        s = [r[key_ssim] for r in rows]
        return {
            "psnr_mean": statistics.fmean(p),
            "psnr_median": statistics.median(p),
            "ssim_mean": statistics.fmean(s),
            "ssim_median": statistics.median(s),
        }

    blurry_stats = stats("psnr_blurry", "ssim_blurry")
    restored_stats = stats("psnr_restored", "ssim_restored")
    report = {
        "checkpoint": str(checkpoint_path),
        "config_digest": runtime.config.digest(),
        "seed": seed,
        "n_images": len(rows),
        "n_skipped": len(skipped),
        "skipped": skipped,
        "blurry": blurry_stats,
        "restored": restored_stats,
        "gain": {
            "psnr_mean": restored_stats["psnr_mean"] - blurry_stats["psnr_mean"],
            "psnr_median": restored_stats["psnr_median"] - blurry_stats["psnr_median"],
            "ssim_mean": restored_stats["ssim_mean"] - blurry_stats["ssim_mean"],
        },
    }
    jsonschema.validate(report, REPORT_SCHEMA)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report
