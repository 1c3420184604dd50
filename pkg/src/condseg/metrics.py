"""Per-image segmentation metrics and their dataset means."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch

METRIC_NAMES = ("iou", "dsc", "recall", "precision")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _as_array(m) -> np.ndarray:
    return m.detach().cpu().numpy() if isinstance(m, torch.Tensor) else np.asarray(m)


def confusion(pred, truth) -> ConfusionCounts:
    p, t = _as_array(pred), _as_array(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    for name, a in (("pred", p), ("truth", t)):
        if not np.isin(a, (0, 1)).all():
            raise ValueError(f"{name} is not a binary mask")
    p, t = p.astype(bool), t.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(np.count_nonzero(~p & ~t))
    return ConfusionCounts(tp, fp, fn, tn)


def _ratio(num: int, den: int, empty: float) -> float:
    return empty if den == 0 else num / den


def image_metrics(c: ConfusionCounts, empty_value: float = 1.0) -> dict[str, float]:
    """IoU, Dice, recall and precision; ``empty_value`` fills the 0/0 cases."""
    return {
        "iou": _ratio(c.tp, c.tp + c.fp + c.fn, empty_value),
        "dsc": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, empty_value),
        "recall": _ratio(c.tp, c.tp + c.fn, empty_value),
        "precision": _ratio(c.tp, c.tp + c.fp, empty_value),
    }


def dataset_means(per_image: Sequence[Mapping[str, float]]) -> dict[str, float]:
    if not per_image:
        raise ValueError("cannot average an empty list of per-image metrics")
    return {k: float(np.mean([m[k] for m in per_image])) for k in METRIC_NAMES}


def batch_metrics(pred, truth, empty_value: float = 1.0) -> list[dict[str, float]]:
    """Per-image metrics for a (B, 1, H, W) batch of binary masks."""
    p, t = _as_array(pred), _as_array(truth)
    return [image_metrics(confusion(pi, ti), empty_value) for pi, ti in zip(p, t)]


def write_per_image_csv(path: str | Path, ids: Iterable[str],
                        per_image: Sequence[Mapping[str, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("image_id",) + METRIC_NAMES)
        for image_id, m in zip(ids, per_image):
            w.writerow([image_id] + [repr(float(m[k])) for k in METRIC_NAMES])
