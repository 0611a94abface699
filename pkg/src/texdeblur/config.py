"""Flat dotted-key configuration.

Config files are plain text, one ``key=value`` per line, ``#`` comments and
blank lines ignored.  Every key must appear in SCHEMA; unknown keys are
rejected.  ``desk_config()`` is the small single-machine preset used by the
tests and demos, ``paper_config()`` the full-scale preset.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from .errors import ConfigError


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _parse_int_list(s: str) -> list:
    return [int(p) for p in s.split(",") if p.strip() != ""]


_PARSERS = {
    "int": int,
    "float": float,
    "bool": _parse_bool,
    "str": lambda s: s.strip(),
    "int_list": _parse_int_list,
}

# key -> (type name, desk default, description)
SCHEMA = {
    "data.image_size": ("int", 96, "side length of synthetic corpus images"),
    "data.train_scenes": ("int", 48, "number of training scenes to synthesize"),
    "data.val_scenes": ("int", 16, "number of held-out validation pairs"),
    "data.tiles": ("int", 2, "tile grid dimension for spatially varying blur"),
    "data.kernel_size": ("int", 9, "blur kernel side length (odd)"),
    "data.blur_strength": ("float", 1.6, "sigma (gaussian) / length scale (motion)"),
    "data.kernel_kind": ("str", "mixed", "gaussian | linear_motion | mixed"),
    "data.ratio_blurry": ("float", 0.6, "fraction of scenes contributing blurry images"),
    "data.ratio_sharp": ("float", 0.4, "fraction of scenes contributing sharp images"),
    "data.patch": ("int", 64, "training patch side length"),
    "data.batch": ("int", 4, "training batch size"),
    "data.flips": ("bool", True, "random horizontal/vertical flip augmentation"),
    "prior.channels": ("int", 16, "texture prior channel count"),
    "prior.downscale": ("int", 4, "input-to-prior spatial downscale factor"),
    "prior.memory_size": ("int", 64, "number of memory bank entries"),
    "deblur.base_channels": ("int", 16, "deblurring network base width"),
    "deblur.blocks": ("int_list", [1, 2, 2, 1], "transformer blocks per scale"),
    "deblur.heads": ("int_list", [1, 1, 2, 2], "attention heads per scale"),
    "deblur.kernel_size": ("int", 3, "adaptive filter kernel size K (odd)"),
    "deblur.ffn_expansion": ("float", 1.1, "feed-forward hidden expansion factor"),
    "deblur.predictor_width": ("int", 16, "hidden width of prior-predictor conv stacks"),
    "reblur.base_channels": ("int", 16, "reblurring U-Net base width"),
    "disc.base_channels": ("int", 24, "discriminator base width"),
    "diffusion.steps": ("int", 8, "number of diffusion iterations T"),
    "diffusion.beta_start": ("float", 0.1, "first beta of the linear schedule"),
    "diffusion.beta_end": ("float", 0.9, "last beta of the linear schedule"),
    "diffusion.resblocks": ("int", 5, "residual blocks in the denoiser"),
    "loss.gan": ("float", 1.0, "adversarial loss weight"),
    "loss.cyc": ("float", 0.1, "cycle consistency loss weight"),
    "loss.wave": ("float", 0.2, "wavelet adversarial loss weight"),
    "loss.diff": ("float", 1.0, "diffusion loss weight"),
    "train.lr": ("float", 1e-4, "Adam learning rate"),
    "train.beta1": ("float", 0.9, "Adam beta1"),
    "train.beta2": ("float", 0.999, "Adam beta2"),
    "train.stage1_steps": ("int", 200, "optimization steps for stage one"),
    "train.stage2_steps": ("int", 500, "optimization steps for stage two"),
    "train.checkpoint_every": ("int", 0, "periodic checkpoint interval (0 = final only)"),
    "ablation.no_dm": ("bool", False, "feed the encoder prior directly, skip diffusion"),
    "ablation.no_tpe": ("bool", False, "replace memory encoder with a plain latent encoder"),
    "ablation.no_ttformer": ("bool", False, "replace transformer blocks with plain conv blocks"),
    "ablation.no_multi_scale": ("bool", False, "inject the prior at the coarsest scale only"),
    "ablation.no_joint_train": ("bool", False, "stage two trains the diffusion model only"),
    "ablation.no_wave_loss": ("bool", False, "disable the wavelet adversarial loss"),
}

# overrides applied on top of the desk defaults
_PAPER_OVERRIDES = {
    "data.patch": 256,
    "data.batch": 8,
    "data.kernel_size": 15,
    "prior.channels": 48,
    "prior.memory_size": 256,
    "deblur.base_channels": 48,
    "deblur.blocks": [4, 6, 6, 4],
    "deblur.heads": [1, 2, 4, 8],
    "deblur.kernel_size": 5,
    "deblur.ffn_expansion": 1.1,
    "deblur.predictor_width": 32,
    "reblur.base_channels": 48,
    "disc.base_channels": 64,
}


class Config:
    """Validated flat key-value configuration."""

    def __init__(self, values: dict):
        for key in values:
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key: {key!r}")
        self._values = dict(values)

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key!r}")
        return self._values[key]

    def __contains__(self, key: str) -> bool:
        return key in self._values

    def __eq__(self, other) -> bool:
        return isinstance(other, Config) and self._values == other._values

    def with_values(self, **dotted) -> "Config":
        """Return a copy with ``key__sub`` style kwargs replaced (``__`` -> ``.``)."""
        updated = dict(self._values)
        for k, v in dotted.items():
            updated[k.replace("__", ".")] = v
        return Config(updated)

    def updated(self, values: dict) -> "Config":
        merged = dict(self._values)
        merged.update(values)
        return Config(merged)

    def to_dict(self) -> dict:
        return dict(self._values)

    def digest(self) -> str:
        """Stable hash of the configuration, recorded in reports and checkpoints."""
        lines = [f"{k}={format_value(self._values[k])}" for k in sorted(self._values)]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()

    def dump(self, path) -> None:
        lines = [f"{k}={format_value(self._values[k])}" for k in sorted(self._values)]
        Path(path).write_text("\n".join(lines) + "\n")


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def desk_config() -> Config:
    return Config({k: default for k, (_, default, _) in SCHEMA.items()})


def paper_config() -> Config:
    values = {k: default for k, (_, default, _) in SCHEMA.items()}
    values.update(_PAPER_OVERRIDES)
    return Config(values)


def parse_entry(key: str, raw: str):
    """Parse one raw string value according to the schema type of ``key``."""
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key: {key!r}")
    type_name = SCHEMA[key][0]
    try:
        return _PARSERS[type_name](raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc


def load_config(path, base: Config | None = None) -> Config:
    """Read a ``key=value`` file on top of the desk defaults (or ``base``)."""
    cfg = base if base is not None else desk_config()
    text = Path(path).read_text()
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        values[key] = parse_entry(key, raw)
    return cfg.updated(values)


def apply_overrides(cfg: Config, overrides) -> Config:
    """Apply repeatable ``--set key=value`` strings."""
    values = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        values[key] = parse_entry(key, raw)
    return cfg.updated(values)
