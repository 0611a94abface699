"""Versioned checkpoint container.

A checkpoint is a single .npz holding one named float array per model
parameter (keys ``<group>.<state_dict key>``) plus a ``__meta__`` JSON blob
(format version, config values, seed, step, stage, diffusion schedule).
Writes go to a temp file and are renamed into place, so a reader never sees
a partial file.
"""

from __future__ import annotations

import hashlib
import json
import os
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

CHECKPOINT_VERSION = 1
META_KEY = "__meta__"


def save_checkpoint(path, models: dict, meta: dict) -> None:
    """Write all model parameter groups and metadata atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for group, model in models.items():
        for key, tensor in model.state_dict().items():
            arrays[f"{group}.{key}"] = tensor.detach().cpu().numpy()
    payload = dict(meta)
    payload["version"] = CHECKPOINT_VERSION
    payload["groups"] = sorted(models.keys())
    arrays[META_KEY] = np.array(json.dumps(payload))
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    finally:
        if tmp.exists():
            tmp.unlink()


def load_checkpoint(path):
    """Return (meta dict, {array key: numpy array})."""
    try:
        with np.load(path, allow_pickle=False) as data:
            if META_KEY not in data:
                raise CheckpointError(f"{path} has no metadata, not a checkpoint")
            meta = json.loads(str(data[META_KEY]))
            arrays = {k: data[k] for k in data.files if k != META_KEY}
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, json.JSONDecodeError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = meta.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )
    return meta, arrays


def restore_models(models: dict, arrays: dict) -> None:
    """Load parameter groups into freshly built models, strictly."""
    for group, model in models.items():
        prefix = f"{group}."
        state = {
            k[len(prefix) :]: torch.from_numpy(v)
            for k, v in arrays.items()
            if k.startswith(prefix)
        }
        if not state:
            raise CheckpointError(f"checkpoint missing parameter group {group!r}")
        try:
            model.load_state_dict(state, strict=True)
        except RuntimeError as exc:
            raise CheckpointError(f"group {group!r} does not fit the model: {exc}") from exc


def parameter_digest(model: torch.nn.Module) -> str:
    """Order-stable content hash of every parameter and buffer."""
    h = hashlib.sha256()
    for key, tensor in sorted(model.state_dict().items()):
        h.update(key.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()
