"""
Contrast-driven window attention
================================

Every pixel re-weights its K x K neighbourhood twice, once with weights
generated from background features and once from foreground features, and
the re-weighted windows are summed back where they overlap.
"""

import numpy as np
import torch

from condseg.cdfa import CDFA, attention_maps, cdfa_reference, contrast_attention

rng = np.random.default_rng(0)
K = 3

# with K=1 each window is the pixel itself, so the values pass through unchanged
v = torch.tensor(rng.normal(size=(1, 2, 4, 4)))
logits = torch.tensor(rng.normal(size=(1, 1, 4, 4)))
print("K=1 returns the values:", torch.equal(contrast_attention(v, logits, logits, 1), v))

# a constant field: interior pixels collect K*K copies of the value
const = torch.ones(1, 1, 7, 7, dtype=torch.float64)
a = torch.tensor(rng.normal(size=(1, K**4, 7, 7)))
out = contrast_attention(const, a, -a, K)
print("constant field, K=3:\n", out[0, 0].numpy().round(3))

# each position owns K^2 x K^2 row-stochastic matrices
maps = attention_maps(a, K)
print("attention shape", tuple(maps.shape), "row sums", maps.sum(-1).mean().item())

# the module against a scalar-loop reference on a tiny input
torch.manual_seed(0)
level = CDFA(3, 4, K=K).double().eval()
x, f_fg, f_bg = (rng.normal(size=(1, c, 5, 5)) for c in (3, 4, 4))
with torch.no_grad():
    fast = level(*(torch.tensor(t) for t in (x, f_fg, f_bg))).numpy()
slow = cdfa_reference(x, f_fg, f_bg, level.weights(), K)
print("max |fast - reference|:", np.abs(fast - slow).max())
