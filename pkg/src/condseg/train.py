"""Two-stage training, evaluation and the training-strategy ablation grid."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .augment import simple_augment, strong_augment
from .backbone import Net0, make_net0
from .checkpoint import checkpoint_config, load_checkpoint, save_checkpoint
from .core import ARCH_KEYS, ConfigError, ParamStore, TrainConfig, seeded_rng, validate_config
from .data import SampleRecord, to_tensors
from .losses import binarize, mask_loss, stage1_loss, stage2_loss
from .metrics import METRIC_NAMES, batch_metrics, dataset_means
from .model import ConDSeg, param_groups

log = logging.getLogger(__name__)

EVAL_BATCH = 16


class TrainingError(RuntimeError):
    """Raised when training cannot continue (empty data, non-finite loss, bad handoff)."""


@dataclass
class EpochRecord:
    epoch: int
    split: str
    losses: dict[str, float]
    metrics: dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0


@dataclass
class RunResult:
    checkpoint: Path
    records: list[EpochRecord]
    best_epoch: int
    best_metrics: dict[str, float]


def _check(cfg: TrainConfig, train: Sequence[SampleRecord], val: Sequence[SampleRecord]) -> None:
    errs = validate_config(cfg)
    if errs:
        raise ConfigError("; ".join(errs))
    if not train:
        raise TrainingError("training set is empty")
    if not val:
        raise TrainingError("validation set is empty")
    size = train[0].image.shape[-1]
    if size != cfg.image_size:
        raise TrainingError(f"data is {size}px but image_size is {cfg.image_size}")


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    starts = list(range(0, n, batch_size))
    if len(starts) > 1 and n - starts[-1] == 1:
        starts.pop()  # a lone trailing sample breaks batch statistics; fold it into the last batch
    for i, start in enumerate(starts):
        end = starts[i + 1] if i + 1 < len(starts) else n
        yield torch.from_numpy(order[start:end])


def _finite(loss, epoch: int, step: int) -> None:
    if not math.isfinite(float(loss.value.detach())):
        raise TrainingError(f"non-finite loss at epoch {epoch}, batch {step}: {loss.breakdown}")


def _mean_terms(terms: list[dict[str, float]]) -> dict[str, float]:
    return {k: float(np.mean([t[k] for t in terms])) for k in terms[0]} if terms else {}


@torch.no_grad()
def predict_probs(model: nn.Module, x: torch.Tensor) -> torch.Tensor:
    """Final probability map in evaluation mode, batched."""
    was_training = model.training
    model.eval()
    outs = []
    for i in range(0, len(x), EVAL_BATCH):
        out = model(x[i:i + EVAL_BATCH])
        outs.append(out if isinstance(out, torch.Tensor) else out.m_final)
    model.train(was_training)
    return torch.cat(outs)


def _validate(model: nn.Module, x: torch.Tensor, y: torch.Tensor, t: float
              ) -> tuple[dict[str, float], dict[str, float]]:
    probs = predict_probs(model, x)
    losses = {k: v for k, v in mask_loss(y, probs).breakdown.items()}
    metrics = dataset_means(batch_metrics(binarize(probs, t), y))
    return losses, metrics


def _run_epochs(cfg: TrainConfig, model: nn.Module, opt: torch.optim.Optimizer, step_fn,
                train, val, epochs: int, ckpt_path: Path, kind: str, extra: dict
                ) -> RunResult:
    x, y = to_tensors(train)
    xv, yv = to_tensors(val)
    batch_rng = seeded_rng(cfg.seed, f"{kind}.batches")
    aug_rng = seeded_rng(cfg.seed, f"{kind}.simple_augment")
    records: list[EpochRecord] = []
    best = (-1.0, 0, {})
    if epochs == 0:
        save_checkpoint(model, ckpt_path, cfg, kind, extra)
    for epoch in range(1, epochs + 1):
        start = time.perf_counter()
        model.train()
        terms = []
        for step, idx in enumerate(_batches(len(x), cfg.batch_size, batch_rng)):
            xb, yb = simple_augment(x[idx], y[idx], aug_rng)
            loss = step_fn(xb, yb)
            _finite(loss, epoch, step)
            opt.zero_grad(set_to_none=True)
            loss.value.backward()
            opt.step()
            terms.append(loss.breakdown)
        records.append(EpochRecord(epoch, "train", _mean_terms(terms),
                                   wall_time=time.perf_counter() - start))
        start = time.perf_counter()
        vloss, vmetrics = _validate(model, xv, yv, cfg.t)
        records.append(EpochRecord(epoch, "val", vloss, vmetrics, time.perf_counter() - start))
        log.info("%s epoch %d: train %s val %s", kind, epoch, records[-2].losses, vmetrics)
        if vmetrics["dsc"] > best[0]:
            best = (vmetrics["dsc"], epoch, vmetrics)
            save_checkpoint(model, ckpt_path, cfg, kind, {**extra, "epoch": epoch})
    return RunResult(ckpt_path.with_suffix(".safetensors"), records, best[1], best[2])


def train_stage1(cfg: TrainConfig, train: Sequence[SampleRecord], val: Sequence[SampleRecord],
                 out_dir: str | Path, rng: np.random.Generator | None = None) -> RunResult:
    """Train the encoder inside Net0; with ``cfg.consistency`` the consistency objective is used.

    Saves the best-validation-Dice Net0 to ``out_dir/net0``.
    """
    _check(cfg, train, val)
    torch.manual_seed(cfg.seed)
    rng = rng if rng is not None else seeded_rng(cfg.seed, "init.stage1")
    net = make_net0(cfg.encoder_id, cfg.channel_widths, rng, cfg.norm)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr_stage1)
    strong_rng = seeded_rng(cfg.seed, "stage1.strong_augment")

    def step(xb, yb):
        m1 = net(xb)
        if not cfg.consistency:
            lv = mask_loss(yb, m1)
            lv.breakdown = {"mask1": float(lv)}
            return lv
        m2 = net(strong_augment(xb, cfg.augment, strong_rng))
        return stage1_loss(yb, m1, m2, cfg.t, cons=cfg.cons_loss)

    extra = {"stage": 1, "consistency": cfg.consistency, "cons_loss": cfg.cons_loss}
    return _run_epochs(cfg, net, opt, step, train, val, cfg.epochs_stage1,
                       Path(out_dir) / "net0", "net0", extra)


def load_encoder(model: nn.Module, encoder_ckpt: str | Path, cfg: TrainConfig) -> list[str]:
    """Copy the ``encoder.`` tensors of a stage-1 checkpoint into ``model``."""
    tensors, manifest = load_checkpoint(encoder_ckpt)
    if manifest["encoder_hash"] != cfg.encoder_hash():
        ck = manifest["config"]
        raise TrainingError(
            "encoder checkpoint does not match the config: checkpoint has "
            f"{ck['encoder_id']} {ck['channel_widths']} norm={ck['norm']}, config has "
            f"{cfg.encoder_id} {cfg.channel_widths} norm={cfg.norm}")
    store = ParamStore.from_module(model)
    try:
        names = store.load(tensors, prefix="encoder.")
    except (KeyError, ValueError) as exc:
        raise TrainingError(f"cannot load encoder from {encoder_ckpt}: {exc}") from exc
    for n in names:
        if not torch.equal(store[n], tensors[n]):
            raise TrainingError(f"encoder tensor {n} did not load bit-exactly")
    return names


def train_stage2(cfg: TrainConfig, train: Sequence[SampleRecord], val: Sequence[SampleRecord],
                 out_dir: str | Path, encoder_ckpt: str | Path | None = None,
                 rng: np.random.Generator | None = None) -> RunResult:
    """Train the full network. Without ``encoder_ckpt`` this is one-stage training from scratch.

    Saves the best-validation-Dice model to ``out_dir/condseg``.
    """
    _check(cfg, train, val)
    torch.manual_seed(cfg.seed)
    rng = rng if rng is not None else seeded_rng(cfg.seed, "init.stage2")
    model = ConDSeg(cfg, rng)
    if encoder_ckpt is not None:
        load_encoder(model, encoder_ckpt, cfg)
    groups = param_groups(model, cfg, two_rate=encoder_ckpt is not None)
    opt = torch.optim.Adam([{"params": g["params"], "lr": g["lr"]} for g in groups])

    def step(xb, yb):
        out = model(xb)
        return stage2_loss(yb, out.m_final, out.m_fg, out.m_bg, out.m_uc)

    extra = {"stage": 2, "encoder_ckpt": str(encoder_ckpt) if encoder_ckpt else None,
             "mode": "two-stage" if encoder_ckpt else "one-stage"}
    return _run_epochs(cfg, model, opt, step, train, val, cfg.epochs_stage2,
                       Path(out_dir) / "condseg", "condseg", extra)


def load_model(ckpt: str | Path, cfg: TrainConfig | None = None) -> tuple[nn.Module, TrainConfig]:
    """Rebuild a Net0 or full model from a checkpoint, in evaluation mode."""
    tensors, manifest = load_checkpoint(ckpt)
    saved = checkpoint_config(manifest)
    if cfg is not None:
        diff = [k for k in ARCH_KEYS if getattr(cfg, k) != getattr(saved, k)]
        if diff:
            raise TrainingError(f"checkpoint architecture differs from config in: {', '.join(diff)}")
    rng = seeded_rng(0, "load")
    if manifest["kind"] == "net0":
        model: nn.Module = make_net0(saved.encoder_id, saved.channel_widths, rng, saved.norm)
    elif manifest["kind"] == "condseg":
        model = ConDSeg(saved, rng)
    else:
        raise TrainingError(f"unknown checkpoint kind {manifest['kind']!r}")
    ParamStore.from_module(model).load(tensors)
    model.eval()
    return model, saved


def evaluate(ckpt: str | Path, data: Sequence[SampleRecord], cfg: TrainConfig
             ) -> tuple[dict[str, float], list[dict[str, float]]]:
    """Dataset means and per-image metrics of the binarized prediction at ``cfg.t``."""
    if not data:
        raise TrainingError("evaluation set is empty")
    model, _ = load_model(ckpt, cfg)
    x, y = to_tensors(data)
    if x.shape[-1] % 32:
        raise TrainingError(f"image size {x.shape[-1]} is not divisible by 32")
    per_image = batch_metrics(binarize(predict_probs(model, x), cfg.t), y)
    return dataset_means(per_image), per_image


# ---------------------------------------------------------------------------
# Records


def records_table(records: Sequence[EpochRecord], timing: bool = False
                  ) -> tuple[list[str], list[list]]:
    """Rows of per-epoch losses and metrics; wall time only with ``timing`` since it is not reproducible."""
    loss_keys = sorted({k for r in records for k in r.losses})
    header = ["epoch", "split"] + [f"loss_{k}" for k in loss_keys] + list(METRIC_NAMES)
    if timing:
        header.append("wall_time")
    rows = []
    for r in records:
        row = [r.epoch, r.split]
        row += [repr(r.losses[k]) if k in r.losses else "" for k in loss_keys]
        row += [repr(r.metrics[k]) if k in r.metrics else "" for k in METRIC_NAMES]
        if timing:
            row.append(f"{r.wall_time:.4f}")
        rows.append(row)
    return header, rows


def write_records_csv(records: Sequence[EpochRecord], path: str | Path, timing: bool = False
                      ) -> None:
    header, rows = records_table(records, timing)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def plot_records(records: Sequence[EpochRecord], path: str | Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    train = [r for r in records if r.split == "train"]
    val = [r for r in records if r.split == "val"]
    ax1.plot([r.epoch for r in train], [sum(r.losses.values()) for r in train], label="train loss")
    ax1.set_xlabel("epoch")
    ax1.legend()
    for k in ("iou", "dsc"):
        ax2.plot([r.epoch for r in val], [r.metrics[k] for r in val], label=f"val m{k.upper()}")
    ax2.set_xlabel("epoch")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Training-strategy grid


STRATEGIES = {
    # name: (stage 1 used, consistency in stage 1, stage 2 used)
    "net0": (True, False, False),
    "net0-cr": (True, True, False),
    "one-stage": (False, False, True),
    "two-stage": (True, False, True),
    "two-stage-cr": (True, True, True),
}


def run_strategy(name: str, cfg: TrainConfig, train, val, out_dir: str | Path) -> dict:
    """Run one row of the training-strategy ablation and return its val metrics."""
    stage1, cr, stage2 = STRATEGIES[name]
    out_dir = Path(out_dir)
    ckpt = None
    result = None
    if stage1:
        result = train_stage1(cfg.replace(consistency=cr), train, val, out_dir / "stage1")
        ckpt = result.checkpoint
    if stage2:
        result = train_stage2(cfg, train, val, out_dir / "stage2", encoder_ckpt=ckpt)
    means, _ = evaluate(result.checkpoint, val, cfg)
    return {"strategy": name, **means, "checkpoint": str(result.checkpoint)}
