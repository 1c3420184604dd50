"""Photometric strong augmentation and right-angle geometric augmentation."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from .core import AugPolicy

_GRAY = (0.299, 0.587, 0.114)


def _check_rgb(x: torch.Tensor) -> None:
    if x.dim() != 4 or x.shape[1] != 3:
        raise ValueError(f"expected an RGB batch of shape (B, 3, H, W), got {tuple(x.shape)}")


def grayscale(x: torch.Tensor) -> torch.Tensor:
    w = x.new_tensor(_GRAY).view(1, 3, 1, 1)
    return (x * w).sum(1, keepdim=True)


def rgb_to_hsv(x: torch.Tensor) -> torch.Tensor:
    r, g, b = x.unbind(1)
    maxc, _ = x.max(1)
    minc, _ = x.min(1)
    delta = maxc - minc
    v = maxc
    s = torch.where(maxc > 0, delta / maxc.clamp_min(1e-12), torch.zeros_like(maxc))
    d = delta.clamp_min(1e-12)
    rc, gc, bc = (maxc - r) / d, (maxc - g) / d, (maxc - b) / d
    h = torch.where(maxc == r, bc - gc, torch.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = torch.where(delta > 0, (h / 6.0) % 1.0, torch.zeros_like(h))
    return torch.stack([h, s, v], 1)


def hsv_to_rgb(x: torch.Tensor) -> torch.Tensor:
    h, s, v = x.unbind(1)
    i = torch.floor(h * 6.0)
    f = h * 6.0 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    i = i.long() % 6
    r = torch.stack([v, q, p, p, t, v], 1).gather(1, i.unsqueeze(1)).squeeze(1)
    g = torch.stack([t, v, v, q, p, p], 1).gather(1, i.unsqueeze(1)).squeeze(1)
    b = torch.stack([p, p, t, v, v, q], 1).gather(1, i.unsqueeze(1)).squeeze(1)
    return torch.stack([r, g, b], 1)


def gaussian_blur(x: torch.Tensor, sigma: float) -> torch.Tensor:
    radius = max(1, int(math.ceil(3 * sigma)))
    coords = torch.arange(-radius, radius + 1, dtype=x.dtype)
    k = torch.exp(-(coords**2) / (2 * sigma**2))
    k = k / k.sum()
    c = x.shape[1]
    pad_h = min(radius, x.shape[2] - 1)
    pad_w = min(radius, x.shape[3] - 1)
    # reflect padding needs pad < size; shrink the kernel to match on tiny images
    kh = k[radius - pad_h: radius + pad_h + 1]
    kw = k[radius - pad_w: radius + pad_w + 1]
    kh, kw = kh / kh.sum(), kw / kw.sum()
    x = F.pad(x, (pad_w, pad_w, pad_h, pad_h), mode="reflect") if (pad_h or pad_w) else x
    x = F.conv2d(x, kw.view(1, 1, 1, -1).repeat(c, 1, 1, 1), groups=c)
    return F.conv2d(x, kh.view(1, 1, -1, 1).repeat(c, 1, 1, 1), groups=c)


def strong_augment(x: torch.Tensor, policy: AugPolicy, rng: np.random.Generator) -> torch.Tensor:
    """Random brightness, contrast, saturation, hue, grayscale and blur, per image.

    Purely photometric: the output stays pixel-aligned with the input.
    """
    _check_rgb(x)
    out = []
    for img in x.unbind(0):
        img = img.unsqueeze(0)
        fb = rng.uniform(*policy.brightness_range)
        fc = rng.uniform(*policy.contrast_range)
        fs = rng.uniform(*policy.saturation_range)
        dh = rng.uniform(*policy.hue_range)
        do_gray = rng.random() < policy.p_grayscale
        do_blur = rng.random() < policy.p_blur
        sigma = rng.uniform(*policy.blur_sigma_range)
        if fb != 1.0:
            img = (img * fb).clamp(0, 1)
        if fc != 1.0:
            mean = grayscale(img).mean()
            img = ((img - mean) * fc + mean).clamp(0, 1)
        if fs != 1.0:
            g = grayscale(img)
            img = ((img - g) * fs + g).clamp(0, 1)
        if dh != 0.0:
            hsv = rgb_to_hsv(img)
            hsv = torch.stack([(hsv[:, 0] + dh) % 1.0, hsv[:, 1], hsv[:, 2]], 1)
            img = hsv_to_rgb(hsv).clamp(0, 1)
        if do_gray:
            img = grayscale(img).expand(-1, 3, -1, -1).contiguous()
        if do_blur:
            img = gaussian_blur(img, sigma).clamp(0, 1)
        out.append(img)
    return torch.cat(out, 0)


def simple_augment(x: torch.Tensor, y: torch.Tensor, rng: np.random.Generator
                   ) -> tuple[torch.Tensor, torch.Tensor]:
    """Random right-angle rotation plus horizontal/vertical flips, shared by image and mask."""
    if x.shape[0] != y.shape[0] or x.shape[2:] != y.shape[2:]:
        raise ValueError(f"image {tuple(x.shape)} and mask {tuple(y.shape)} are not aligned")
    xs, ys = [], []
    for xi, yi in zip(x.unbind(0), y.unbind(0)):
        k = int(rng.integers(0, 4))
        hflip = rng.random() < 0.5
        vflip = rng.random() < 0.5
        if x.shape[2] != x.shape[3] and k % 2:
            k = 0  # non-square images cannot be rotated by 90 degrees in place
        xi, yi = torch.rot90(xi, k, (1, 2)), torch.rot90(yi, k, (1, 2))
        if hflip:
            xi, yi = xi.flip(2), yi.flip(2)
        if vflip:
            xi, yi = xi.flip(1), yi.flip(1)
        xs.append(xi)
        ys.append(yi)
    return torch.stack(xs), torch.stack(ys)
