"""Full second-stage network and optimizer parameter groups."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .backbone import encode, make_encoder, init_module
from .cdfa import CDFAStack
from .core import TrainConfig
from .decoder import SADecoder
from .sid import SID, AuxHead


@dataclass
class Stage2Output:
    m_final: torch.Tensor
    m_fg: torch.Tensor
    m_bg: torch.Tensor
    m_uc: torch.Tensor
    intermediates: dict[str, torch.Tensor] = field(default_factory=dict)


class ConDSeg(nn.Module):
    def __init__(self, cfg: TrainConfig, rng: np.random.Generator):
        super().__init__()
        widths = cfg.working_widths
        c4 = cfg.channel_widths[3]
        self.encoder = make_encoder(cfg.encoder_id, cfg.channel_widths, rng, cfg.norm)
        with torch.random.fork_rng(devices=[]):
            self.sid = SID(c4, norm=cfg.norm)
            self.aux = AuxHead(c4, norm=cfg.norm)
            self.cdfa = CDFAStack(cfg.channel_widths, widths, c4, K=cfg.K, norm=cfg.norm)
            self.decoder = SADecoder(widths, norm=cfg.norm)
        for part in (self.sid, self.aux, self.cdfa, self.decoder):
            init_module(part, rng)

    def forward(self, x: torch.Tensor, debug: bool = False) -> Stage2Output:
        size = x.shape[2]
        feats = encode(x, self.encoder)
        dec = self.sid(feats[3])
        m_fg, m_bg, m_uc = self.aux(dec, size)
        agg = self.cdfa(feats, dec.f_fg, dec.f_bg)
        m = self.decoder(agg, size)
        out = Stage2Output(m, m_fg, m_bg, m_uc)
        if debug:
            names = [f"f{i}" for i in range(1, 5)] + [f"F{i}" for i in range(1, 5)]
            out.intermediates = dict(zip(names, list(feats) + list(agg)))
            out.intermediates.update(f_fg=dec.f_fg, f_bg=dec.f_bg, f_uc=dec.f_uc)
        return out


def condseg_forward(x: torch.Tensor, model: ConDSeg, cfg: TrainConfig | None = None,
                    debug: bool = False) -> Stage2Output:
    if cfg is not None and tuple(x.shape[2:]) != (cfg.image_size, cfg.image_size):
        raise ValueError(f"input size {tuple(x.shape[2:])} does not match image_size {cfg.image_size}")
    return model(x, debug=debug)


def param_groups(model: nn.Module, cfg: TrainConfig, two_rate: bool = True) -> list[dict]:
    """Encoder parameters at the low rate, everything else at the full rate."""
    enc, rest = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        (enc if name.startswith("encoder.") else rest).append((name, p))
    if not rest:
        raise ValueError("model has no non-encoder parameters to train")
    if not enc:
        raise ValueError("model has no encoder parameters")
    enc_lr = cfg.lr_stage2_encoder if two_rate else cfg.lr_stage2_rest
    return [
        {"name": "encoder", "params": [p for _, p in enc], "names": [n for n, _ in enc], "lr": enc_lr},
        {"name": "rest", "params": [p for _, p in rest], "names": [n for n, _ in rest],
         "lr": cfg.lr_stage2_rest},
    ]
