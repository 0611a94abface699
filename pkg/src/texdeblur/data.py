"""Synthetic unpaired corpus, manifests, splits, and patch batching.

Images are numpy float32 arrays of shape (H, W, 3) with values in [0, 1].
On disk they are 8-bit PNGs; conversion is /255 on load and round(x*255)
on save.  Manifests are JSON lines: {"path", "scene_id", "domain_tag"} for
unpaired records, {"blurry", "sharp", "scene_id"} for paired ones.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


# ---------------------------------------------------------------------------
# samples and validation


@dataclass
class ImageSample:
    pixels: np.ndarray  # (H, W, 3) float32 in [0, 1]
    scene_id: str
    domain_tag: str  # "blurry" or "sharp"

    def validate(self) -> "ImageSample":
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3:
            raise DataError(f"expected (H, W, 3) pixels, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise DataError(f"non-finite pixels in scene {self.scene_id!r}")
        if p.min() < 0.0 or p.max() > 1.0:
            raise DataError(f"pixels outside [0, 1] in scene {self.scene_id!r}")
        if self.domain_tag not in ("blurry", "sharp"):
            raise DataError(f"bad domain_tag {self.domain_tag!r}")
        return self


@dataclass
class BlurSpec:
    kernel_kind: str  # "gaussian" | "linear_motion" | "mixed"
    kernel_size: int
    sigma_or_length: float
    tiles: int = 1

    def validate(self) -> "BlurSpec":
        if self.kernel_kind not in ("gaussian", "linear_motion", "mixed"):
            raise DataError(f"unknown kernel kind {self.kernel_kind!r}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise DataError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if not self.sigma_or_length > 0:
            raise DataError(f"sigma_or_length must be positive, got {self.sigma_or_length}")
        if self.tiles < 1:
            raise DataError(f"tiles must be >= 1, got {self.tiles}")
        return self


@dataclass
class UnpairedSplit:
    blurry_set: list  # ImageSample, domain_tag "blurry"
    sharp_set: list  # ImageSample, domain_tag "sharp"
    ratio: tuple
    seed: int


# ---------------------------------------------------------------------------
# blur kernels


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized isotropic Gaussian tap grid, float64."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def motion_kernel(size: int, length: int, angle: float) -> np.ndarray:
    """Equal-weight taps along a line through the kernel center.

    The line is rasterized to nearest pixels, so a horizontal length-5 kernel
    is exactly five taps of 1/5.
    """
    length = int(max(1, min(length, size)))
    k = np.zeros((size, size), dtype=np.float64)
    c = (size - 1) / 2
    dy, dx = math.sin(angle), math.cos(angle)
    for t in np.arange(length, dtype=np.float64) - (length - 1) / 2:
        y = int(round(c + t * dy))
        x = int(round(c + t * dx))
        k[min(max(y, 0), size - 1), min(max(x, 0), size - 1)] += 1.0
    return k / k.sum()


def draw_kernel(spec: BlurSpec, rng: np.random.Generator) -> np.ndarray:
    """Sample one kernel; strength is jittered so tiles differ visibly."""
    kind = spec.kernel_kind
    if kind == "mixed":
        kind = "gaussian" if rng.random() < 0.5 else "linear_motion"
    strength = spec.sigma_or_length * rng.uniform(0.7, 1.3)
    if kind == "gaussian":
        return gaussian_kernel(spec.kernel_size, strength)
    # sigma_or_length acts as a length scale for motion: taps ~ 3x the scale
    length = int(np.clip(round(strength * 3.0), 3, spec.kernel_size))
    return motion_kernel(spec.kernel_size, length, rng.uniform(0.0, math.pi))


def filter_reflect(channel: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Correlate one (H, W) float64 channel with reflect border handling."""
    m = kernel.shape[0] // 2
    padded = np.pad(channel, m, mode="reflect") if m else channel
    windows = np.lib.stride_tricks.sliding_window_view(padded, kernel.shape)
    return np.einsum("hwij,ij->hw", windows, kernel)


def synthesize_blur(sharp: ImageSample, spec: BlurSpec, seed: int) -> ImageSample:
    """Blur a sharp image; tiles > 1 applies an independent kernel per tile.

    Tile windows are cut from the reflect-padded full image, so tile borders
    see their true neighbors and the varying blur has no seam artifacts.
    """
    spec.validate()
    pixels = sharp.pixels.astype(np.float64)
    h, w, _ = pixels.shape
    if spec.kernel_size > min(h, w):
        raise DataError(
            f"kernel_size {spec.kernel_size} exceeds image size {h}x{w}"
        )
    rng = np.random.default_rng(seed)
    out = np.empty_like(pixels)
    m = spec.kernel_size // 2
    padded = np.pad(pixels, ((m, m), (m, m), (0, 0)), mode="reflect") if m else pixels
    ys = np.linspace(0, h, spec.tiles + 1, dtype=int)
    xs = np.linspace(0, w, spec.tiles + 1, dtype=int)
    for ti in range(spec.tiles):
        for tj in range(spec.tiles):
            kernel = draw_kernel(spec, rng)
            y0, y1 = ys[ti], ys[ti + 1]
            x0, x1 = xs[tj], xs[tj + 1]
            window = padded[y0 : y1 + 2 * m, x0 : x1 + 2 * m]
            for c in range(3):
                sub = np.lib.stride_tricks.sliding_window_view(
                    window[:, :, c], kernel.shape
                )
                out[y0:y1, x0:x1, c] = np.einsum("hwij,ij->hw", sub, kernel)
    blurry = np.clip(out, 0.0, 1.0).astype(np.float32)
    return ImageSample(blurry, sharp.scene_id, "blurry")


# ---------------------------------------------------------------------------
# procedural scene rendering


def render_scene(size: int, rng: np.random.Generator) -> np.ndarray:
    """Random gradient background + rectangles + thin strokes, (size, size, 3)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    c0 = rng.uniform(0.0, 1.0, size=3)
    c1 = rng.uniform(0.0, 1.0, size=3)
    theta = rng.uniform(0.0, 2 * math.pi)
    ramp = (xx * math.cos(theta) + yy * math.sin(theta) + 1.0) / 2.0
    img = c0[None, None, :] + ramp[:, :, None] * (c1 - c0)[None, None, :]

    for _ in range(rng.integers(4, 9)):
        rh = rng.integers(size // 8, size // 2)
        rw = rng.integers(size // 8, size // 2)
        y0 = rng.integers(0, size - rh)
        x0 = rng.integers(0, size - rw)
        color = rng.uniform(0.0, 1.0, size=3)
        img[y0 : y0 + rh, x0 : x0 + rw] = color

    # text-like strokes: short dark or light polylines, 1-2 px wide
    for _ in range(rng.integers(6, 14)):
        n = rng.integers(2, 5)
        pts = rng.uniform(0.1, 0.9, size=(n, 2)) * size
        val = 0.05 if rng.random() < 0.5 else 0.95
        width = int(rng.integers(1, 3))
        for (y0, x0), (y1, x1) in zip(pts[:-1], pts[1:]):
            steps = int(max(abs(y1 - y0), abs(x1 - x0))) + 1
            for t in np.linspace(0.0, 1.0, steps):
                y = int(round(y0 + t * (y1 - y0)))
                x = int(round(x0 + t * (x1 - x0)))
                img[max(y, 0) : y + width, max(x, 0) : x + width] = val

    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# PNG and manifest IO


def save_image(path, pixels: np.ndarray) -> None:
    data = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data, mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            data = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return data / 255.0


def write_manifest(path, records: list) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_manifest(path) -> list:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: bad JSON: {exc}") from exc
    return records


def make_synthetic_corpus(out_dir, config, seed: int) -> dict:
    """Render the corpus to disk and write train/val manifests.

    Training scenes get a sharp and a blurry rendition each (the split later
    assigns each scene to exactly one domain).  Validation scenes are paired
    blurry/ground-truth images for metric evaluation.
    """
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    size = config["data.image_size"]
    spec = BlurSpec(
        kernel_kind=config["data.kernel_kind"],
        kernel_size=config["data.kernel_size"],
        sigma_or_length=config["data.blur_strength"],
        tiles=config["data.tiles"],
    ).validate()

    train_records = []
    for i in range(config["data.train_scenes"]):
        scene = f"scene{i:04d}"
        sharp = ImageSample(render_scene(size, rng), scene, "sharp")
        blurry = synthesize_blur(sharp, spec, seed=int(rng.integers(2**31)))
        save_image(out / "train" / "sharp" / f"{scene}.png", sharp.pixels)
        save_image(out / "train" / "blurry" / f"{scene}.png", blurry.pixels)
        train_records.append(
            {"path": f"train/sharp/{scene}.png", "scene_id": scene, "domain_tag": "sharp"}
        )
        train_records.append(
            {"path": f"train/blurry/{scene}.png", "scene_id": scene, "domain_tag": "blurry"}
        )
    write_manifest(out / "train_manifest.jsonl", train_records)

    val_records = []
    for i in range(config["data.val_scenes"]):
        scene = f"val{i:04d}"
        sharp = ImageSample(render_scene(size, rng), scene, "sharp")
        blurry = synthesize_blur(sharp, spec, seed=int(rng.integers(2**31)))
        save_image(out / "val" / "sharp" / f"{scene}.png", sharp.pixels)
        save_image(out / "val" / "blurry" / f"{scene}.png", blurry.pixels)
        val_records.append(
            {
                "blurry": f"val/blurry/{scene}.png",
                "sharp": f"val/sharp/{scene}.png",
                "scene_id": scene,
            }
        )
    write_manifest(out / "val_manifest.jsonl", val_records)

    return {
        "out_dir": str(out),
        "train_scenes": config["data.train_scenes"],
        "val_scenes": config["data.val_scenes"],
        "seed": seed,
    }


# ---------------------------------------------------------------------------
# unpaired split


def load_train_pairs(corpus_dir) -> list:
    """Read the train manifest into (sharp, blurry, scene_id) tuples."""
    corpus = Path(corpus_dir)
    records = read_manifest(corpus / "train_manifest.jsonl")
    by_scene = {}
    for r in records:
        by_scene.setdefault(r["scene_id"], {})[r["domain_tag"]] = r["path"]
    pairs = []
    for scene in sorted(by_scene):
        tags = by_scene[scene]
        if "sharp" not in tags or "blurry" not in tags:
            raise DataError(f"scene {scene!r} lacks a sharp/blurry rendition")
        sharp = ImageSample(load_image(corpus / tags["sharp"]), scene, "sharp").validate()
        blurry = ImageSample(load_image(corpus / tags["blurry"]), scene, "blurry").validate()
        pairs.append((sharp, blurry, scene))
    return pairs


def split_unpaired(pairs: list, ratio, seed: int) -> UnpairedSplit:
    """Assign each scene to exactly one domain, blurry first per the ratio.

    ``pairs`` is a list of (sharp ImageSample, blurry ImageSample, scene_id).
    Scene sets of the two domains are disjoint by construction.
    """
    r0, r1 = float(ratio[0]), float(ratio[1])
    if r0 <= 0 or r1 <= 0 or abs(r0 + r1 - 1.0) > 1e-9:
        raise DataError(f"ratio must be positive and sum to 1, got {ratio}")
    n = len(pairs)
    if n < 2:
        raise DataError(f"need at least 2 scenes for a disjoint split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_blurry = int(math.floor(n * r0 + 0.5))
    n_blurry = min(max(n_blurry, 1), n - 1)
    blurry_set = [pairs[i][1] for i in order[:n_blurry]]
    sharp_set = [pairs[i][0] for i in order[n_blurry:]]
    return UnpairedSplit(blurry_set, sharp_set, (r0, r1), seed)


def save_split_descriptor(path, split: UnpairedSplit) -> None:
    desc = {
        "ratio": list(split.ratio),
        "seed": split.seed,
        "blurry_scenes": [s.scene_id for s in split.blurry_set],
        "sharp_scenes": [s.scene_id for s in split.sharp_set],
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(desc, indent=2) + "\n")


def load_split(corpus_dir, descriptor_path) -> UnpairedSplit:
    """Materialize a split from its JSON descriptor and the corpus manifest."""
    corpus = Path(corpus_dir)
    try:
        desc = json.loads(Path(descriptor_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read split descriptor {descriptor_path}: {exc}") from exc
    records = read_manifest(corpus / "train_manifest.jsonl")
    by_key = {(r["scene_id"], r["domain_tag"]): r["path"] for r in records}

    def fetch(scene: str, tag: str) -> ImageSample:
        key = (scene, tag)
        if key not in by_key:
            raise DataError(f"scene {scene!r} ({tag}) missing from manifest")
        pixels = load_image(corpus / by_key[key])
        return ImageSample(pixels, scene, tag).validate()

    blurry_set = [fetch(s, "blurry") for s in desc["blurry_scenes"]]
    sharp_set = [fetch(s, "sharp") for s in desc["sharp_scenes"]]
    return UnpairedSplit(blurry_set, sharp_set, tuple(desc["ratio"]), desc["seed"])


# ---------------------------------------------------------------------------
# patch batching


def _draw_patch(
    samples: list,
    patch: int,
    flips: bool,
    rng: np.random.Generator,
    flip_probability: float,
) -> np.ndarray:
    sample = samples[int(rng.integers(len(samples)))]
    h, w, _ = sample.pixels.shape
    if patch > h or patch > w:
        raise DataError(f"patch {patch} exceeds image size {h}x{w}")
    y0 = int(rng.integers(h - patch + 1))
    x0 = int(rng.integers(w - patch + 1))
    crop = sample.pixels[y0 : y0 + patch, x0 : x0 + patch]
    if flips:
        if rng.random() < flip_probability:
            crop = crop[:, ::-1]
        if rng.random() < flip_probability:
            crop = crop[::-1, :]
    return np.ascontiguousarray(crop, dtype=np.float32)


def sample_patch_batch(
    split: UnpairedSplit,
    patch: int,
    batch: int,
    flips: bool,
    seed: int,
    flip_probability: float = 0.5,
):
    """Draw one blurry batch and one independent sharp batch, (B, p, p, 3).

    The sequence of batches is a pure function of the seed; any prefetching
    a caller layers on top must preserve that order.
    """
    if not split.blurry_set or not split.sharp_set:
        raise DataError("split has an empty domain")
    rng = np.random.default_rng(seed)
    blurry = np.stack(
        [_draw_patch(split.blurry_set, patch, flips, rng, flip_probability) for _ in range(batch)]
    )
    sharp = np.stack(
        [_draw_patch(split.sharp_set, patch, flips, rng, flip_probability) for _ in range(batch)]
    )
    return blurry, sharp
