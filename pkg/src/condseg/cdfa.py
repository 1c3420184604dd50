"""Contrast-driven feature aggregation.

Each position (i, j) owns a K x K window of value vectors. Two K^2 x K^2
attention matrices, generated per position from the foreground and the
background features, re-weight the window in two steps; the weighted windows
are then scattered back and summed where they overlap (outlook-style fold).

Conventions pinned here and by :func:`cdfa_reference`:

* the K^4 attention logits at a position are reshaped row-major into a
  K^2 x K^2 matrix, and softmax runs along each row;
* a window is a K^2 x C matrix whose slot ``p * K + q`` holds
  ``V[i + p - K//2, j + q - K//2]`` (zero outside the image);
* the overlap sum is not divided by the number of contributing windows.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .layers import CBR, upsample


def _check_k(K: int) -> None:
    if K < 1 or K % 2 == 0:
        raise ValueError(f"window size K must be a positive odd integer, got {K}")


def attention_maps(logits: torch.Tensor, K: int) -> torch.Tensor:
    """(B, K^4, H, W) logits -> (B, H*W, K^2, K^2) row-softmaxed matrices."""
    B, _, H, W = logits.shape
    k2 = K * K
    a = logits.reshape(B, k2, k2, H * W).permute(0, 3, 1, 2)
    return a.softmax(-1)


def contrast_attention(v: torch.Tensor, a_fg: torch.Tensor, a_bg: torch.Tensor, K: int
                       ) -> torch.Tensor:
    """Windowed two-step attention on values ``v`` (B, C, H, W) with raw logits (B, K^4, H, W)."""
    _check_k(K)
    B, C, H, W = v.shape
    k2 = K * K
    if a_fg.shape != (B, k2 * k2, H, W) or a_bg.shape != a_fg.shape:
        raise ValueError(f"attention logits must have shape {(B, k2 * k2, H, W)}, "
                         f"got {tuple(a_fg.shape)} and {tuple(a_bg.shape)}")
    windows = F.unfold(v, K, padding=K // 2)                     # (B, C*k2, HW)
    windows = windows.reshape(B, C, k2, H * W).permute(0, 3, 2, 1)  # (B, HW, k2, C)
    weighted = attention_maps(a_fg, K) @ (attention_maps(a_bg, K) @ windows)
    cols = weighted.permute(0, 3, 2, 1).reshape(B, C * k2, H * W)
    return F.fold(cols, (H, W), K, padding=K // 2)


class CDFA(nn.Module):
    """One aggregation level: CBR pre-fusion, value map, and fg/bg-driven attention."""

    def __init__(self, in_channels: int, channels: int, K: int = 3, fuse_depth: int = 2,
                 norm: str = "batch"):
        super().__init__()
        _check_k(K)
        self.K = K
        self.channels = channels
        blocks = [CBR(in_channels, channels, 3, norm=norm)]
        blocks += [CBR(channels, channels, 3, norm=norm) for _ in range(fuse_depth - 1)]
        self.fuse = nn.Sequential(*blocks)
        self.value = nn.Conv2d(channels, channels, 1, bias=False)
        self.attn_fg = nn.Conv2d(channels, K**4, 1, bias=False)
        self.attn_bg = nn.Conv2d(channels, K**4, 1, bias=False)

    def forward(self, x: torch.Tensor, f_fg: torch.Tensor, f_bg: torch.Tensor) -> torch.Tensor:
        if f_fg.shape[2:] != x.shape[2:] or f_bg.shape[2:] != x.shape[2:]:
            raise ValueError(f"guidance maps {tuple(f_fg.shape)} / {tuple(f_bg.shape)} do not "
                             f"match the input {tuple(x.shape)}")
        v = self.value(self.fuse(x))
        return contrast_attention(v, self.attn_fg(f_fg), self.attn_bg(f_bg), self.K)

    def weights(self) -> dict:
        """Plain float64 arrays describing this level, for :func:`cdfa_reference`."""
        def arr(t):
            return None if t is None else t.detach().cpu().double().numpy().copy()

        fuse = []
        for block in self.fuse:
            conv, norm = block[0], block[1]
            entry = {"conv": arr(conv.weight), "gamma": arr(norm.weight),
                     "beta": arr(norm.bias), "eps": norm.eps}
            if isinstance(norm, nn.BatchNorm2d):
                entry.update(kind="batch", mean=arr(norm.running_mean), var=arr(norm.running_var))
            else:
                entry.update(kind="group", groups=norm.num_groups)
            fuse.append(entry)
        return {"fuse": fuse, "w_v": arr(self.value.weight)[:, :, 0, 0],
                "w_fg": arr(self.attn_fg.weight)[:, :, 0, 0],
                "w_bg": arr(self.attn_bg.weight)[:, :, 0, 0], "K": self.K}


def cdfa_forward(x: torch.Tensor, f_fg: torch.Tensor, f_bg: torch.Tensor, weights: CDFA,
                 K: int | None = None) -> torch.Tensor:
    if K is not None and K != weights.K:
        raise ValueError(f"weights were built for K={weights.K}, got K={K}")
    return weights(x, f_fg, f_bg)


# ---------------------------------------------------------------------------
# Brute-force reference. Deliberately shares no code with the path above.


def _ref_conv3x3(x, w):
    B, Cin, H, W = x.shape
    Cout = w.shape[0]
    out = np.zeros((B, Cout, H, W))
    for b in range(B):
        for o in range(Cout):
            for i in range(H):
                for j in range(W):
                    s = 0.0
                    for c in range(Cin):
                        for di in range(3):
                            for dj in range(3):
                                y, z = i + di - 1, j + dj - 1
                                if 0 <= y < H and 0 <= z < W:
                                    s += w[o, c, di, dj] * x[b, c, y, z]
                    out[b, o, i, j] = s
    return out


def _ref_norm(x, p, training):
    B, C, H, W = x.shape
    out = np.empty_like(x)
    if p["kind"] == "batch":
        for c in range(C):
            if training:
                vals = [x[b, c, i, j] for b in range(B) for i in range(H) for j in range(W)]
                mean = sum(vals) / len(vals)
                var = sum((v - mean) ** 2 for v in vals) / len(vals)
            else:
                mean, var = p["mean"][c], p["var"][c]
            for b in range(B):
                for i in range(H):
                    for j in range(W):
                        out[b, c, i, j] = ((x[b, c, i, j] - mean) / np.sqrt(var + p["eps"])
                                           * p["gamma"][c] + p["beta"][c])
    else:
        G = p["groups"]
        per = C // G
        for b in range(B):
            for g in range(G):
                chans = range(g * per, (g + 1) * per)
                vals = [x[b, c, i, j] for c in chans for i in range(H) for j in range(W)]
                mean = sum(vals) / len(vals)
                var = sum((v - mean) ** 2 for v in vals) / len(vals)
                for c in chans:
                    for i in range(H):
                        for j in range(W):
                            out[b, c, i, j] = ((x[b, c, i, j] - mean) / np.sqrt(var + p["eps"])
                                               * p["gamma"][c] + p["beta"][c])
    return out


def _ref_linear(x, w):
    B, Cin, H, W = x.shape
    out = np.zeros((B, w.shape[0], H, W))
    for b in range(B):
        for i in range(H):
            for j in range(W):
                for o in range(w.shape[0]):
                    out[b, o, i, j] = sum(w[o, c] * x[b, c, i, j] for c in range(Cin))
    return out


def _ref_softmax_row(row):
    m = max(row)
    e = [np.exp(r - m) for r in row]
    s = sum(e)
    return [v / s for v in e]


def cdfa_reference(x, f_fg, f_bg, weights: dict, K: int, training: bool = False) -> np.ndarray:
    """Scalar-loop evaluation of one CDFA level in float64. Tiny inputs only."""
    _check_k(K)
    if K != weights["K"]:
        raise ValueError(f"weights were built for K={weights['K']}, got K={K}")
    x, f_fg, f_bg = (np.asarray(a, dtype=np.float64) for a in (x, f_fg, f_bg))
    B, _, H, W = x.shape
    if H > 8 or W > 8:
        raise ValueError("cdfa_reference is limited to H, W <= 8")
    if f_fg.shape[2:] != (H, W) or f_bg.shape[2:] != (H, W):
        raise ValueError("guidance maps must match the input spatially")

    h = x
    for p in weights["fuse"]:
        h = np.maximum(_ref_norm(_ref_conv3x3(h, p["conv"]), p, training), 0.0)
    v = _ref_linear(h, weights["w_v"])
    a_fg = _ref_linear(f_fg, weights["w_fg"])
    a_bg = _ref_linear(f_bg, weights["w_bg"])

    C = v.shape[1]
    k2 = K * K
    r = K // 2
    out = np.zeros((B, C, H, W))
    for b in range(B):
        for i in range(H):
            for j in range(W):
                # window values, slot p*K+q <- V[i+p-r, j+q-r]
                win = [[0.0] * C for _ in range(k2)]
                for p in range(K):
                    for q in range(K):
                        y, z = i + p - r, j + q - r
                        if 0 <= y < H and 0 <= z < W:
                            for c in range(C):
                                win[p * K + q][c] = v[b, c, y, z]
                s_fg = [_ref_softmax_row([a_fg[b, row * k2 + col, i, j] for col in range(k2)])
                        for row in range(k2)]
                s_bg = [_ref_softmax_row([a_bg[b, row * k2 + col, i, j] for col in range(k2)])
                        for row in range(k2)]
                step1 = [[sum(s_bg[m][n] * win[n][c] for n in range(k2)) for c in range(C)]
                         for m in range(k2)]
                step2 = [[sum(s_fg[m][n] * step1[n][c] for n in range(k2)) for c in range(C)]
                         for m in range(k2)]
                # scatter each weighted slot back to the pixel it came from
                for p in range(K):
                    for q in range(K):
                        y, z = i + p - r, j + q - r
                        if 0 <= y < H and 0 <= z < W:
                            for c in range(C):
                                out[b, c, y, z] += step2[p * K + q][c]
    return out


# ---------------------------------------------------------------------------
# Pre-enhancement and the deep-to-shallow stack


class PreEnhance(nn.Module):
    """1x1 projection to the working width, then parallel dilated 3x3 convs, summed."""

    def __init__(self, in_channels: int, channels: int, rates: Sequence[int] = (1, 2, 4)):
        super().__init__()
        self.project = nn.Conv2d(in_channels, channels, 1, bias=False)
        self.branches = nn.ModuleList(
            nn.Conv2d(channels, channels, 3, padding=r, dilation=r) for r in rates
        )

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        h = self.project(f)
        return sum(branch(h) for branch in self.branches)


def pre_enhance(f: torch.Tensor, module: PreEnhance) -> torch.Tensor:
    return module(f)


class Guide(nn.Module):
    """Resizes a decoupled feature map to one CDFA level (1x1 conv + bilinear)."""

    def __init__(self, in_channels: int, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, channels, 1)

    def forward(self, f: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
        return upsample(self.conv(f), size)


class CDFAStack(nn.Module):
    def __init__(self, encoder_channels: Sequence[int], widths: Sequence[int], sid_channels: int,
                 K: int = 3, norm: str = "batch"):
        super().__init__()
        self.widths = tuple(widths)
        self.enhance = nn.ModuleList(PreEnhance(c, w) for c, w in zip(encoder_channels, widths))
        in_ch = [widths[i] + widths[i + 1] for i in range(3)] + [widths[3]]
        self.levels = nn.ModuleList(CDFA(in_ch[i], widths[i], K, norm=norm) for i in range(4))
        self.guide_fg = nn.ModuleList(Guide(sid_channels, w) for w in widths)
        self.guide_bg = nn.ModuleList(Guide(sid_channels, w) for w in widths)

    def forward(self, feats: Sequence[torch.Tensor], f_fg: torch.Tensor, f_bg: torch.Tensor
                ) -> list[torch.Tensor]:
        e = [m(f) for m, f in zip(self.enhance, feats)]
        return self.stack(e, f_fg, f_bg)

    def stack(self, e: Sequence[torch.Tensor], f_fg: torch.Tensor, f_bg: torch.Tensor
              ) -> list[torch.Tensor]:
        out: list[torch.Tensor | None] = [None] * 4
        for i in (3, 2, 1, 0):
            size = tuple(e[i].shape[2:])
            x = e[i] if i == 3 else torch.cat([upsample(out[i + 1], size), e[i]], 1)
            out[i] = self.levels[i](x, self.guide_fg[i](f_fg, size), self.guide_bg[i](f_bg, size))
        return out


def cdfa_stack(e: Sequence[torch.Tensor], f_fg: torch.Tensor, f_bg: torch.Tensor,
               weights: CDFAStack) -> list[torch.Tensor]:
    return weights.stack(e, f_fg, f_bg)
