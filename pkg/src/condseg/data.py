"""Image/mask folder ingestion, deterministic splits and a synthetic blob generator."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from .core import SynthSpec, seeded_rng

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


@dataclass
class SampleRecord:
    image_id: str
    image: np.ndarray           # (3, H, W) float32 in [0, 1]
    mask: np.ndarray            # (1, H, W) uint8 in {0, 1}
    source: str = "real"
    blobs: list[tuple[float, float, float, float, float]] = field(default_factory=list)


def _list_images(d: Path) -> dict[str, Path]:
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return {p.stem: p for p in sorted(d.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def load_image(path: str | Path, size: int) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB").resize((size, size), Image.BILINEAR)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return (np.asarray(im, dtype=np.float32) / 255.0).transpose(2, 0, 1).copy()


def load_mask(path: str | Path, size: int) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L").resize((size, size), Image.NEAREST), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read mask {path}: {exc}") from exc
    top = arr.max()
    binary = arr >= 0.5 * top if top > 0 else np.zeros_like(arr, dtype=bool)
    return binary.astype(np.uint8)[None]


def load_folder(images_dir: str | Path, masks_dir: str | Path, size: int) -> list[SampleRecord]:
    images = _list_images(Path(images_dir))
    masks = _list_images(Path(masks_dir))
    for stem, path in images.items():
        if stem not in masks:
            raise FileNotFoundError(f"no mask for image {path.name} in {masks_dir}")
    for stem, path in masks.items():
        if stem not in images:
            raise FileNotFoundError(f"no image for mask {path.name} in {images_dir}")
    return [
        SampleRecord(stem, load_image(images[stem], size), load_mask(masks[stem], size), "real")
        for stem in sorted(images)
    ]


def load_dataset_dir(root: str | Path, size: int) -> list[SampleRecord]:
    """Folder layout: ``root/images`` and ``root/masks`` with matching stems."""
    root = Path(root)
    return load_folder(root / "images", root / "masks", size)


def save_folder(records: Sequence[SampleRecord], root: str | Path) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for r in records:
        img = np.clip(np.rint(r.image.transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
        Image.fromarray(img).save(root / "images" / f"{r.image_id}.png")
        Image.fromarray(r.mask[0].astype(np.uint8) * 255).save(root / "masks" / f"{r.image_id}.png")


def split(records: Sequence, fractions: Sequence[float], seed: int) -> tuple[list, list, list]:
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")
    n = len(records)
    order = seeded_rng(seed, "split").permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    pick = [records[i] for i in order]
    return pick[:n_train], pick[n_train:n_train + n_val], pick[n_train + n_val:]


def to_tensors(records: Sequence[SampleRecord]) -> tuple[torch.Tensor, torch.Tensor]:
    if not records:
        raise ValueError("no records")
    x = torch.from_numpy(np.stack([r.image for r in records]).astype(np.float32))
    y = torch.from_numpy(np.stack([r.mask for r in records]).astype(np.float32))
    return x, y


# ---------------------------------------------------------------------------
# Synthetic data


def rasterize_ellipse(size: int, cx: float, cy: float, a: float, b: float, theta: float
                      ) -> np.ndarray:
    """Pixels whose centers fall inside the ellipse (semi-axes a, b, rotated by theta)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    dx, dy = xx - cx, yy - cy
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _draw_blobs(spec: SynthSpec, rng: np.random.Generator) -> list[tuple]:
    s = spec.size
    lo, hi = spec.radius_range
    k = int(rng.integers(spec.blob_count[0], spec.blob_count[1] + 1))
    blobs = []
    if spec.cooccurrence and k > 1:
        # one size class per image: small blobs cluster together, large ones travel alone
        small = rng.random() < 0.5
        r_lo, r_hi = (lo, lo + 0.35 * (hi - lo)) if small else (lo + 0.65 * (hi - lo), hi)
        anchor = rng.uniform(0.3 * s, 0.7 * s, size=2)
        for _ in range(k if small else 1):
            r = rng.uniform(r_lo, r_hi) * s
            c = np.clip(anchor + rng.normal(0, 2.5 * r, size=2), r, s - r)
            blobs.append((c[0], c[1], r, r * rng.uniform(0.6, 1.0), rng.uniform(0, np.pi)))
        return blobs
    for _ in range(k):
        r = rng.uniform(lo, hi) * s
        cx, cy = rng.uniform(r, s - r, size=2)
        blobs.append((cx, cy, r, r * rng.uniform(0.6, 1.0), rng.uniform(0, np.pi)))
    return blobs


def gen_synthetic(spec: SynthSpec) -> list[SampleRecord]:
    """Tinted elliptical blobs on a tissue-coloured background.

    Each image gets an illumination ramp, a global brightness factor and
    Gaussian noise; the mask is the exact union of the drawn ellipses.
    """
    errs = spec.errors()
    if errs:
        raise ValueError("; ".join(errs))
    rng = seeded_rng(spec.seed, "synth")
    s = spec.size
    yy, xx = (np.mgrid[0:s, 0:s].astype(np.float64) + 0.5) / s
    records = []
    for n in range(spec.n_images):
        mask = np.zeros((s, s), dtype=bool)
        while not mask.any():
            blobs = _draw_blobs(spec, rng)
            mask = np.zeros((s, s), dtype=bool)
            for blob in blobs:
                mask |= rasterize_ellipse(s, *blob)
        bg = rng.uniform((0.35, 0.2, 0.2), (0.6, 0.4, 0.35))
        contrast = rng.uniform(*spec.contrast_range)
        fg = bg + contrast * (1.0 - bg)
        img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
        angle = rng.uniform(0, 2 * np.pi)
        ramp = (xx - 0.5) * np.cos(angle) + (yy - 0.5) * np.sin(angle)
        ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-12)
        illum = 1.0 - spec.illumination * ramp
        gain = rng.uniform(*spec.brightness_range)
        img = img * illum[None] * gain
        if spec.noise_sigma > 0:
            img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
        records.append(SampleRecord(
            f"synth_{spec.seed}_{n:04d}", np.clip(img, 0, 1).astype(np.float32),
            mask.astype(np.uint8)[None], "synthetic", [tuple(map(float, b)) for b in blobs]))
    return records


def low_contrast_spec(**overrides) -> SynthSpec:
    """Dim, low-contrast, unevenly lit regime."""
    base = dict(contrast_range=(0.1, 0.25), illumination=0.5, noise_sigma=0.04,
                brightness_range=(0.45, 1.1))
    base.update(overrides)
    return SynthSpec(**base)
