"""Checkpoints: a safetensors payload plus a JSON manifest next to it.

``<stem>.safetensors`` holds the named tensors; ``<stem>.json`` lists names,
shapes, dtypes, the architecture hash and the full config snapshot.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import torch
from safetensors.torch import load_file, save_file
from torch import nn

from .core import ARCH_KEYS, ParamStore, TrainConfig

FORMAT = "condseg-ckpt/1"


def _paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".safetensors", ".json"):
        p = p.with_suffix("")
    return p.with_suffix(".safetensors"), p.with_suffix(".json")


def save_checkpoint(module: nn.Module, path: str | Path, cfg: TrainConfig, kind: str,
                    extra: dict | None = None) -> Path:
    tensor_path, manifest_path = _paths(path)
    tensor_path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {n: t.contiguous().cpu() for n, t in ParamStore.from_module(module).tensors().items()}
    save_file(tensors, str(tensor_path))
    manifest = {
        "format": FORMAT,
        "kind": kind,
        "names": sorted(tensors),
        "shapes": {n: list(t.shape) for n, t in sorted(tensors.items())},
        "dtypes": {n: str(t.dtype).replace("torch.", "") for n, t in sorted(tensors.items())},
        "encoder_hash": cfg.encoder_hash(),
        "config_hash": cfg.hash(ARCH_KEYS),
        "payload_sha256": hashlib.sha256(tensor_path.read_bytes()).hexdigest(),
        "config": cfg.to_dict(),
    }
    if extra:
        manifest.update(extra)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return tensor_path


def load_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    tensor_path, manifest_path = _paths(path)
    if not tensor_path.exists() or not manifest_path.exists():
        raise FileNotFoundError(f"checkpoint incomplete: need {tensor_path} and {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{manifest_path}: unknown checkpoint format {manifest.get('format')!r}")
    tensors = load_file(str(tensor_path))
    if sorted(tensors) != manifest["names"]:
        raise ValueError(f"{tensor_path}: tensor names disagree with the manifest")
    return tensors, manifest


def checkpoint_config(manifest: dict) -> TrainConfig:
    return TrainConfig.from_dict(manifest["config"])
