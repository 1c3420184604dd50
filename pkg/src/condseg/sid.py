"""Semantic information decoupling: foreground / background / uncertainty branches."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .layers import CBR, ChannelAttention, SpatialAttention, upsample


@dataclass
class DecoupledFeatures:
    f_fg: torch.Tensor
    f_bg: torch.Tensor
    f_uc: torch.Tensor


def _branch(channels: int, depth: int, norm: str) -> nn.Sequential:
    return nn.Sequential(*[CBR(channels, channels, 3, norm=norm) for _ in range(depth)])


class SID(nn.Module):
    def __init__(self, channels: int, depth: int = 2, norm: str = "batch"):
        super().__init__()
        self.channels = channels
        self.fg = _branch(channels, depth, norm)
        self.bg = _branch(channels, depth, norm)
        self.uc = _branch(channels, depth, norm)

    def forward(self, f4: torch.Tensor) -> DecoupledFeatures:
        if f4.dim() != 4 or f4.shape[1] != self.channels:
            raise ValueError(f"SID expects level-4 features with {self.channels} channels, "
                             f"got {tuple(f4.shape)}")
        return DecoupledFeatures(self.fg(f4), self.bg(f4), self.uc(f4))


class AuxBranch(nn.Sequential):
    def __init__(self, channels: int, norm: str):
        super().__init__(
            CBR(channels, channels, 3, norm=norm),
            ChannelAttention(channels),
            SpatialAttention(),
            nn.Conv2d(channels, 1, 1),
        )

    @property
    def collapse(self) -> nn.Conv2d:
        return self[3]


class AuxHead(nn.Module):
    """Predicts M_fg, M_bg, M_uc with independent sigmoids."""

    def __init__(self, channels: int, norm: str = "batch"):
        super().__init__()
        self.fg = AuxBranch(channels, norm)
        self.bg = AuxBranch(channels, norm)
        self.uc = AuxBranch(channels, norm)

    def forward(self, feats: DecoupledFeatures, out_size: int
                ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        h, w = feats.f_fg.shape[2:]
        if out_size % h or out_size % w:
            raise ValueError(f"out_size {out_size} is not a multiple of the feature size {(h, w)}")
        return tuple(
            torch.sigmoid(upsample(branch(f), out_size))
            for branch, f in ((self.fg, feats.f_fg), (self.bg, feats.f_bg), (self.uc, feats.f_uc))
        )


def sid_forward(f4: torch.Tensor, sid: SID) -> DecoupledFeatures:
    return sid(f4)


def aux_head(features: DecoupledFeatures, out_size: int, head: AuxHead):
    return head(features, out_size)
