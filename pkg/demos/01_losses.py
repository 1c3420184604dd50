"""
Segmentation losses on a handful of pixels
==========================================

Small masks make every term easy to check by eye.
"""

import torch

from condseg.losses import (
    binarize, complementarity_loss, consistency_loss, dynamic_penalties, mask_loss, stage2_loss,
)

# ground truth: a 2x2 square inside a 4x4 image
y = torch.zeros(1, 1, 4, 4)
y[..., 1:3, 1:3] = 1

# a decent prediction and a slightly perturbed copy of it
m1 = 0.1 + 0.8 * y
m2 = (m1 + 0.15 * torch.randn(1, 1, 4, 4, generator=torch.Generator().manual_seed(0))).clamp(0, 1)

print("mask loss (BCE + Dice):", mask_loss(y, m1).breakdown)

# consistency compares each prediction with the other's binarized mask
print("binarized m2:\n", binarize(m2, 0.5)[0, 0])
print("consistency:", float(consistency_loss(m1, m2, 0.5)))
print("consistency with itself on a binary mask:", float(consistency_loss(y, y, 0.5)))

# small foreground predictions get a larger penalty weight
for cover in (1.0, 0.5, 0.1, 0.01):
    fg = torch.full((1, 1, 4, 4), cover)
    print(f"coverage {cover:>5}: beta = {dynamic_penalties(fg, fg)[0]:.3f}")

# complementarity is zero when each pixel belongs to one map only
fg, bg = y, 1 - y
print("one-hot maps:", float(complementarity_loss(fg, bg, torch.zeros_like(y))))
third = torch.full_like(y, 1 / 3)
print("uniform thirds:", float(complementarity_loss(third, third, third)))

# the full second-stage objective with its named terms
lv = stage2_loss(y, m1, m1, 1 - m1, torch.full_like(y, 0.05))
print("stage-2 terms:", {k: round(v, 4) for k, v in lv.breakdown.items()}, lv.extras)
