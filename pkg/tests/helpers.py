"""Shared test utilities: finite differences and small configs."""

from __future__ import annotations

import numpy as np
import torch

from condseg.core import TrainConfig


def rel_err(a: float, f: float, floor: float = 1e-6) -> float:
    return abs(a - f) / max(abs(a), abs(f), floor)


def central_diff(fn, x: torch.Tensor, idx, h: float = 1e-6) -> float:
    """d fn / d x[idx] by central differences; ``x`` is modified in place and restored."""
    with torch.no_grad():
        orig = x[idx].item()
        x[idx] = orig + h
        up = float(fn())
        x[idx] = orig - h
        down = float(fn())
        x[idx] = orig
    return (up - down) / (2 * h)


def check_grads(fn, inputs: list[torch.Tensor], h: float = 1e-6, floor: float = 1e-6) -> float:
    """Max relative error between autograd and finite differences over every input entry."""
    for x in inputs:
        x.grad = None
    fn().backward()
    worst = 0.0
    for x in inputs:
        analytic = x.grad.clone()
        for idx in np.ndindex(*x.shape):
            worst = max(worst, rel_err(analytic[idx].item(), central_diff(fn, x, idx, h), floor))
    return worst


def prob(rng: np.random.Generator, shape, lo=0.05, hi=0.95, avoid=None, margin=0.02):
    """Random probabilities in [lo, hi], optionally kept ``margin`` away from ``avoid``."""
    v = rng.uniform(lo, hi, size=shape)
    if avoid is not None:
        close = np.abs(v - avoid) < margin
        v[close] = np.where(v[close] < avoid, avoid - margin - 0.01, avoid + margin + 0.01)
    return torch.tensor(v, dtype=torch.float64, requires_grad=True)


def binary(rng: np.random.Generator, shape) -> torch.Tensor:
    return torch.tensor(rng.integers(0, 2, size=shape), dtype=torch.float64)


def tiny_cfg(**kw) -> TrainConfig:
    base = dict(image_size=32, channel_widths=[4, 8, 8, 8], batch_size=4,
                epochs_stage1=1, epochs_stage2=1)
    base.update(kw)
    return TrainConfig(**base)


def random_cdfa_case(rng: np.random.Generator, K: int, dtype=torch.float64, norm: str = "batch"):
    """A CDFA level with randomized weights and normalization statistics, plus inputs."""
    from condseg.cdfa import CDFA

    H, W = (int(v) for v in rng.integers(2, 7, size=2))
    C = int(rng.integers(1, 5))
    c_in = int(rng.integers(1, 5))
    B = int(rng.integers(1, 3))
    torch.manual_seed(int(rng.integers(2**31)))
    m = CDFA(c_in, C, K, norm=norm)
    with torch.no_grad():
        for p in m.parameters():
            p.copy_(torch.tensor(rng.normal(0, 0.7, size=p.shape)))
        for mod in m.modules():
            if isinstance(mod, torch.nn.BatchNorm2d):
                mod.running_mean.copy_(torch.tensor(rng.normal(0, 0.5, size=mod.num_features)))
                mod.running_var.copy_(torch.tensor(rng.uniform(0.5, 2.0, size=mod.num_features)))
    m = m.to(dtype).eval()
    x = rng.normal(size=(B, c_in, H, W))
    g_fg = rng.normal(size=(B, C, H, W))
    g_bg = rng.normal(size=(B, C, H, W))
    return m, x, g_fg, g_bg


# acceptance results, printed by the terminal-summary hook in conftest.py
ACCEPTANCE: list[str] = []


def report(number: str, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
    ACCEPTANCE.append(line)
    print(line, flush=True)
