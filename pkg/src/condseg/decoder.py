"""Size-aware decoder: three decoders over adjacent aggregation levels, fused."""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .layers import CBR, ChannelAttention, SpatialAttention, upsample


class LevelDecoder(nn.Module):
    """Upsample the deeper map, concatenate with the shallower one, CBR -> CAM -> SAM."""

    def __init__(self, shallow: int, deep: int, norm: str = "batch"):
        super().__init__()
        self.out_channels = shallow
        self.cbr = CBR(shallow + deep, shallow, 3, norm=norm)
        self.cam = ChannelAttention(shallow)
        self.sam = SpatialAttention()

    def forward(self, shallow: torch.Tensor, deep: torch.Tensor) -> torch.Tensor:
        x = torch.cat([shallow, upsample(deep, tuple(shallow.shape[2:]))], 1)
        return self.sam(self.cam(self.cbr(x)))


class SADecoder(nn.Module):
    def __init__(self, widths: Sequence[int], norm: str = "batch"):
        super().__init__()
        w1, w2, w3, w4 = widths
        self.widths = tuple(widths)
        self.small = LevelDecoder(w1, w2, norm)
        self.medium = LevelDecoder(w2, w3, norm)
        self.large = LevelDecoder(w3, w4, norm)
        self.fusion = nn.Conv2d(w1 + w2 + w3, 1, 1)

    def forward(self, feats: Sequence[torch.Tensor], out_size: int) -> torch.Tensor:
        if len(feats) != 4:
            raise ValueError(f"expected four aggregated maps, got {len(feats)}")
        for i, (f, w) in enumerate(zip(feats, self.widths)):
            if f.shape[1] != w:
                raise ValueError(f"level {i + 1} has {f.shape[1]} channels, expected {w}")
        for i in range(3):
            h, hd = feats[i].shape[2], feats[i + 1].shape[2]
            if h != 2 * hd:
                raise ValueError(f"level {i + 1} ({h}) must be twice the size of level {i + 2} ({hd})")
        f1, f2, f3, f4 = feats
        outs = [self.small(f1, f2), self.medium(f2, f3), self.large(f3, f4)]
        return torch.sigmoid(self.fuse(outs, out_size))

    def fuse(self, outs: Sequence[torch.Tensor], out_size: int) -> torch.Tensor:
        # Same value as fusion(cat(upsample(o) for o in outs)): a 1x1 conv commutes
        # with per-channel bilinear resampling, so project first, then upsample.
        w, start = self.fusion.weight, 0
        logits = self.fusion.bias.view(1, 1, 1, 1)
        for o in outs:
            c = o.shape[1]
            logits = logits + upsample(F.conv2d(o, w[:, start:start + c]), out_size)
            start += c
        return logits


def sa_decode(feats: Sequence[torch.Tensor], decoder: SADecoder, out_size: int) -> torch.Tensor:
    return decoder(feats, out_size)
