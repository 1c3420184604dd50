"""Segmentation losses for both training stages.

All functions take (B, 1, H, W) tensors and return a :class:`LossValue` whose
``value`` is a differentiable scalar tensor. Gradients come from autograd.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .core import check_same_shape

BCE_EPS = 1e-7
DICE_EPS = 1e-6
BETA_EPS = 1e-4


@dataclass
class LossValue:
    """Scalar loss plus named terms that sum to it; ``extras`` holds side values."""

    value: torch.Tensor
    breakdown: dict[str, float]
    extras: dict[str, float] = field(default_factory=dict)

    def __float__(self) -> float:
        return float(self.value.detach())

    def backward(self) -> None:
        self.value.backward()


def _scalar(v: torch.Tensor | float) -> float:
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


def _lv(value: torch.Tensor, **terms: torch.Tensor | float) -> LossValue:
    return LossValue(value, {k: _scalar(v) for k, v in terms.items()})


def _bce(y: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    m = m.clamp(BCE_EPS, 1 - BCE_EPS)
    return -(y * torch.log(m) + (1 - y) * torch.log(1 - m)).mean()


def _dice(y: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    inter = (m * y).sum()
    return 1 - (2 * inter + DICE_EPS) / (m.sum() + y.sum() + DICE_EPS)


def bce_loss(y: torch.Tensor, m: torch.Tensor) -> LossValue:
    check_same_shape(y, m)
    v = _bce(y, m)
    return _lv(v, bce=v)


def dice_loss(y: torch.Tensor, m: torch.Tensor) -> LossValue:
    """Soft Dice over the whole batch, smoothed so empty-vs-empty gives 0."""
    check_same_shape(y, m)
    v = _dice(y, m)
    return _lv(v, dice=v)


def mask_loss(y: torch.Tensor, m: torch.Tensor) -> LossValue:
    check_same_shape(y, m)
    b, d = _bce(y, m), _dice(y, m)
    return _lv(b + d, bce=b, dice=d)


def binarize(m: torch.Tensor, t: float) -> torch.Tensor:
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold t must lie in (0, 1), got {t}")
    return (m.detach() >= t).to(m.dtype)


def consistency_loss(m1: torch.Tensor, m2: torch.Tensor, t: float) -> LossValue:
    """Symmetric BCE where each prediction is scored against the other's binarization."""
    check_same_shape(m1, m2)
    a = _bce(binarize(m2, t), m1)
    b = _bce(binarize(m1, t), m2)
    v = 0.5 * (a + b)
    return _lv(v, cons=v)


def kl_consistency(m1: torch.Tensor, m2: torch.Tensor, t: float | None = None) -> LossValue:
    """Symmetrized Bernoulli KL divergence; comparison baseline only."""
    check_same_shape(m1, m2)
    p = m1.clamp(BCE_EPS, 1 - BCE_EPS)
    q = m2.clamp(BCE_EPS, 1 - BCE_EPS)

    def kl(a, b):
        return (a * torch.log(a / b) + (1 - a) * torch.log((1 - a) / (1 - b))).mean()

    v = 0.5 * (kl(p, q) + kl(q, p))
    return _lv(v, cons=v)


def js_consistency(m1: torch.Tensor, m2: torch.Tensor, t: float | None = None) -> LossValue:
    """Bernoulli Jensen-Shannon divergence; comparison baseline only."""
    check_same_shape(m1, m2)
    p = m1.clamp(BCE_EPS, 1 - BCE_EPS)
    q = m2.clamp(BCE_EPS, 1 - BCE_EPS)
    mid = 0.5 * (p + q)

    def kl(a, b):
        return (a * torch.log(a / b) + (1 - a) * torch.log((1 - a) / (1 - b))).mean()

    v = 0.5 * (kl(p, mid) + kl(q, mid))
    return _lv(v, cons=v)


CONSISTENCY_LOSSES = {"bce": consistency_loss, "kl": kl_consistency, "js": js_consistency}


def dynamic_penalties(m_fg: torch.Tensor, m_bg: torch.Tensor) -> tuple[float, float]:
    """Inverse-tanh-of-coverage weights, clamped so an empty prediction stays finite.

    Returned as plain floats: the penalties weight the losses but are not
    differentiated through.
    """
    c_fg = max(float(m_fg.detach().mean()), BETA_EPS)
    c_bg = max(float(m_bg.detach().mean()), BETA_EPS)
    return 1.0 / math.tanh(c_fg), 1.0 / math.tanh(c_bg)


def complementarity_loss(m_fg: torch.Tensor, m_bg: torch.Tensor, m_uc: torch.Tensor) -> LossValue:
    check_same_shape(m_fg, m_bg, m_uc)
    v = (m_fg * m_bg + m_fg * m_uc + m_bg * m_uc).mean()
    return _lv(v, compl=v)


def stage1_loss(y: torch.Tensor, m1: torch.Tensor, m2: torch.Tensor, t: float,
                cons: str = "bce") -> LossValue:
    l1 = mask_loss(y, m1).value
    l2 = mask_loss(y, m2).value
    lc = CONSISTENCY_LOSSES[cons](m1, m2, t).value
    return _lv(l1 + l2 + lc, mask1=l1, mask2=l2, cons=lc)


def stage2_loss(y: torch.Tensor, m_final: torch.Tensor, m_fg: torch.Tensor,
                m_bg: torch.Tensor, m_uc: torch.Tensor,
                betas: tuple[float, float] | None = None,
                detach_betas: bool = True) -> LossValue:
    """Final-mask loss plus penalized foreground/background losses and complementarity.

    ``betas`` overrides the penalties (used to hold them fixed in gradient
    checks). With ``detach_betas=False`` the penalties are computed as
    differentiable tensors instead.
    """
    check_same_shape(y, m_final, m_fg, m_bg, m_uc)
    lm = mask_loss(y, m_final).value
    lfg = mask_loss(y, m_fg).value
    lbg = mask_loss(1 - y, m_bg).value
    lc = complementarity_loss(m_fg, m_bg, m_uc).value
    if betas is not None:
        b1, b2 = betas
    elif detach_betas:
        b1, b2 = dynamic_penalties(m_fg, m_bg)
    else:
        b1 = 1 / torch.tanh(m_fg.mean().clamp_min(BETA_EPS))
        b2 = 1 / torch.tanh(m_bg.mean().clamp_min(BETA_EPS))
    fg, bg = b1 * lfg, b2 * lbg
    out = _lv(lm + fg + bg + lc, mask=lm, fg=fg, bg=bg, compl=lc)
    out.extras.update(beta1=_scalar(b1), beta2=_scalar(b2))
    return out
