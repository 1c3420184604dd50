"""Shared types, seeded RNG streams, parameter store and the run configuration."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np
import torch
from torch import nn


class ConfigError(ValueError):
    """Raised when a configuration document or value is invalid."""


# ---------------------------------------------------------------------------
# RNG


def _stream_key(stream: str) -> int:
    return int.from_bytes(hashlib.sha256(stream.encode("utf-8")).digest()[:8], "little")


def seeded_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent, reproducible numpy generator for a named stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), _stream_key(stream)]))


def torch_generator(rng: np.random.Generator) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(rng.integers(0, 2**63 - 1)))
    return g


# ---------------------------------------------------------------------------
# Mask / feature checks


def check_prob_mask(m: torch.Tensor, name: str = "mask") -> None:
    if m.dim() != 4 or m.shape[1] != 1:
        raise ValueError(f"{name} must have shape (B, 1, H, W), got {tuple(m.shape)}")


def check_binary_mask(m: torch.Tensor | np.ndarray, name: str = "mask") -> None:
    arr = m.detach().cpu().numpy() if isinstance(m, torch.Tensor) else np.asarray(m)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1")


def check_same_shape(*tensors: torch.Tensor) -> None:
    shapes = {tuple(t.shape) for t in tensors}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


# ---------------------------------------------------------------------------
# Config


@dataclass
class AugPolicy:
    """Magnitudes for the photometric strong augmentation."""

    brightness_range: tuple[float, float] = (0.5, 1.5)
    contrast_range: tuple[float, float] = (0.5, 1.5)
    saturation_range: tuple[float, float] = (0.5, 1.5)
    hue_range: tuple[float, float] = (-0.1, 0.1)
    p_grayscale: float = 0.2
    blur_sigma_range: tuple[float, float] = (0.1, 2.0)
    p_blur: float = 0.5

    @classmethod
    def identity(cls) -> "AugPolicy":
        return cls((1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (0.0, 0.0), 0.0, (0.1, 0.1), 0.0)

    def errors(self) -> list[str]:
        errs = []
        for name in ("p_grayscale", "p_blur"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                errs.append(f"augment.{name} must be in [0, 1]")
        for name in ("brightness_range", "contrast_range", "saturation_range",
                     "hue_range", "blur_sigma_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                errs.append(f"augment.{name} must be ordered (lo <= hi)")
        for name in ("brightness_range", "contrast_range", "saturation_range"):
            if getattr(self, name)[0] < 0:
                errs.append(f"augment.{name} must be nonnegative")
        if self.blur_sigma_range[0] <= 0:
            errs.append("augment.blur_sigma_range must be positive")
        return errs


@dataclass
class SynthSpec:
    """Parameters of the synthetic blob dataset."""

    n_images: int = 240
    size: int = 64
    blob_count: tuple[int, int] = (1, 3)
    radius_range: tuple[float, float] = (0.08, 0.22)
    contrast_range: tuple[float, float] = (0.25, 0.5)
    illumination: float = 0.3
    noise_sigma: float = 0.03
    brightness_range: tuple[float, float] = (0.8, 1.1)
    cooccurrence: bool = False
    seed: int = 0

    def errors(self) -> list[str]:
        errs = []
        lo, hi = self.radius_range
        if not (0 < lo <= hi < 0.5):
            errs.append("synth.radius_range must lie within (0, 0.5) and be ordered")
        lo, hi = self.contrast_range
        if not (0 < lo <= hi <= 1):
            errs.append("synth.contrast_range must lie within (0, 1] and be ordered")
        if self.blob_count[0] < 1 or self.blob_count[0] > self.blob_count[1]:
            errs.append("synth.blob_count must be an ordered range starting at >= 1")
        if self.n_images < 1:
            errs.append("synth.n_images must be >= 1")
        if self.size < 1:
            errs.append("synth.size must be >= 1")
        if not 0 <= self.illumination < 1:
            errs.append("synth.illumination must be in [0, 1)")
        if self.noise_sigma < 0:
            errs.append("synth.noise_sigma must be >= 0")
        return errs


@dataclass
class TrainConfig:
    image_size: int = 64
    batch_size: int = 4
    lr_stage1: float = 1e-4
    lr_stage2_encoder: float = 1e-5
    lr_stage2_rest: float = 1e-4
    epochs_stage1: int = 50
    epochs_stage2: int = 50
    K: int = 3
    t: float = 0.5
    seed: int = 0
    encoder_id: str = "tiny-residual"
    channel_widths: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    cdfa_widths: list[int] | None = None
    norm: str = "batch"
    consistency: bool = True
    cons_loss: str = "bce"
    split_fractions: tuple[float, float, float] = (0.8, 0.2, 0.0)
    data_dir: str | None = None
    out_dir: str | None = None
    augment: AugPolicy = field(default_factory=AugPolicy)
    synth: SynthSpec = field(default_factory=SynthSpec)

    @property
    def working_widths(self) -> list[int]:
        return list(self.cdfa_widths) if self.cdfa_widths is not None else list(self.channel_widths)

    def replace(self, **changes: Any) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        return json.loads(json.dumps(d))  # tuples -> lists, canonical

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainConfig":
        d = dict(d)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "augment" in d:
            d["augment"] = _section(AugPolicy, d["augment"], "augment")
        if "synth" in d:
            d["synth"] = _section(SynthSpec, d["synth"], "synth")
        if "split_fractions" in d:
            d["split_fractions"] = tuple(d["split_fractions"])
        return cls(**d)

    def hash(self, keys: Iterable[str] | None = None) -> str:
        d = self.to_dict()
        if keys is not None:
            d = {k: d[k] for k in keys}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def encoder_hash(self) -> str:
        return self.hash(ENCODER_KEYS)


ENCODER_KEYS = ("encoder_id", "channel_widths", "norm")
ARCH_KEYS = ENCODER_KEYS + ("cdfa_widths", "K")


def _section(cls, value: Any, name: str):
    if isinstance(value, cls):
        return value
    if not isinstance(value, Mapping):
        raise ConfigError(f"config section {name!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(value) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {', '.join(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
    return cls(**kwargs)


def validate_config(cfg: TrainConfig) -> list[str]:
    """Return every violated invariant; an empty list means the config is valid."""
    errs: list[str] = []
    if not isinstance(cfg.K, int) or cfg.K < 1:
        errs.append("K must be a positive integer")
    elif cfg.K % 2 == 0:
        errs.append("K must be odd")
    if not 0.0 < cfg.t < 1.0:
        errs.append("t in (0,1): threshold t must lie strictly between 0 and 1")
    if cfg.image_size < 32 or cfg.image_size % 32:
        errs.append("image_size must be a positive multiple of 32")
    if cfg.batch_size < 1:
        errs.append("batch_size must be >= 1")
    for name in ("lr_stage1", "lr_stage2_encoder", "lr_stage2_rest"):
        if not getattr(cfg, name) > 0:
            errs.append(f"{name} must be positive")
    for name in ("epochs_stage1", "epochs_stage2"):
        if getattr(cfg, name) < 0:
            errs.append(f"{name} must be >= 0")
    if len(cfg.channel_widths) != 4 or any(int(c) < 1 for c in cfg.channel_widths):
        errs.append("channel_widths must list 4 positive counts")
    if cfg.cdfa_widths is not None and (
        len(cfg.cdfa_widths) != 4 or any(int(c) < 1 for c in cfg.cdfa_widths)
    ):
        errs.append("cdfa_widths must list 4 positive counts")
    from .backbone import ENCODERS  # deferred: backbone imports this module

    if cfg.encoder_id not in ENCODERS:
        errs.append(f"encoder_id must be one of {', '.join(sorted(ENCODERS))}")
    elif cfg.encoder_id == "paper-resnet50-shape" and list(cfg.channel_widths) != [256, 512, 1024, 2048]:
        errs.append("encoder_id paper-resnet50-shape needs channel_widths [256, 512, 1024, 2048]")
    if cfg.norm not in ("batch", "group"):
        errs.append("norm must be 'batch' or 'group'")
    if cfg.cons_loss not in ("bce", "kl", "js"):
        errs.append("cons_loss must be one of bce, kl, js")
    fr = cfg.split_fractions
    if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        errs.append("split_fractions must be three nonnegative numbers summing to 1")
    errs += cfg.augment.errors()
    errs += cfg.synth.errors()
    return errs


def load_config(path: str | Path) -> TrainConfig:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return TrainConfig.from_dict(d)


def dump_config(cfg: TrainConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def save_config(cfg: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(dump_config(cfg))


# ---------------------------------------------------------------------------
# Parameter store


@dataclass
class ParamEntry:
    tensor: torch.Tensor
    trainable: bool

    @property
    def grad(self) -> torch.Tensor:
        g = self.tensor.grad if self.trainable else None
        return torch.zeros_like(self.tensor) if g is None else g


class ParamStore:
    """Named view over a module's parameters and buffers.

    Parameters are trainable entries whose gradient slot is ``.grad``; buffers
    (normalization statistics) are carried as non-trainable entries so that a
    saved store reproduces evaluation-mode outputs exactly.
    """

    def __init__(self, entries: Mapping[str, ParamEntry]):
        self.entries = dict(entries)

    @classmethod
    def from_module(cls, module: nn.Module, prefix: str = "") -> "ParamStore":
        entries: dict[str, ParamEntry] = {}
        for name, p in module.named_parameters():
            entries[prefix + name] = ParamEntry(p, p.requires_grad)
        for name, b in module.named_buffers():
            if name.endswith("num_batches_tracked"):
                continue
            entries[prefix + name] = ParamEntry(b, False)
        return cls(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.entries[name].tensor

    def names(self, prefix: str = "", trainable_only: bool = False) -> list[str]:
        return [
            n for n, e in self.entries.items()
            if n.startswith(prefix) and (e.trainable or not trainable_only)
        ]

    def tensors(self, prefix: str = "") -> dict[str, torch.Tensor]:
        return {n: self.entries[n].tensor.detach().clone() for n in self.names(prefix)}

    def load(self, tensors: Mapping[str, torch.Tensor], prefix: str = "") -> list[str]:
        """Copy every stored name under ``prefix`` from ``tensors``.

        A name this store expects but ``tensors`` lacks is an error; nothing is
        silently skipped. Returns the loaded names.
        """
        wanted = self.names(prefix)
        if not wanted:
            raise KeyError(f"no parameters under prefix {prefix!r}")
        missing = [n for n in wanted if n not in tensors]
        if missing:
            raise KeyError(f"missing tensors for: {', '.join(missing[:5])}"
                           + (" ..." if len(missing) > 5 else ""))
        with torch.no_grad():
            for n in wanted:
                src, dst = tensors[n], self.entries[n].tensor
                if tuple(src.shape) != tuple(dst.shape):
                    raise ValueError(f"shape mismatch for {n}: {tuple(src.shape)} vs {tuple(dst.shape)}")
                dst.copy_(src.to(dst.dtype))
        return wanted
