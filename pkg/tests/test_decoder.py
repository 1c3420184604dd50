import numpy as np
import pytest
import torch
import torch.nn.functional as F

from condseg.backbone import init_module
from condseg.core import seeded_rng
from condseg.decoder import SADecoder, sa_decode

WIDTHS = [4, 6, 8, 8]
SIZES = [16, 8, 4, 2]


def _dec(seed=0):
    d = SADecoder(WIDTHS)
    init_module(d, seeded_rng(seed, "dec"))
    return d.eval()


def _feats(b=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(b, w, s, s, generator=g) for w, s in zip(WIDTHS, SIZES)]


def test_output_shape_and_range():
    out = sa_decode(_feats(), _dec(), 64)
    assert out.shape == (2, 1, 64, 64) and out.min() > 0 and out.max() < 1


def test_zeroed_fusion_gives_half():
    d = _dec()
    with torch.no_grad():
        d.fusion.weight.zero_()
        d.fusion.bias.zero_()
    out = d(_feats(), 64)
    assert torch.equal(out, torch.full_like(out, 0.5))


def test_fusion_equals_concat_then_conv():
    d = _dec().double()
    feats = [f.double() for f in _feats()]
    with torch.no_grad():
        outs = [d.small(feats[0], feats[1]), d.medium(feats[1], feats[2]), d.large(feats[2], feats[3])]
        cat = torch.cat([F.interpolate(o, size=(64, 64), mode="bilinear", align_corners=False)
                         for o in outs], 1)
        direct = F.conv2d(cat, d.fusion.weight, d.fusion.bias)
        assert torch.allclose(d.fuse(outs, 64), direct, atol=1e-12)


def test_gradient_reaches_all_decoders():
    d = _dec().train()
    d(_feats(), 32).sum().backward()
    for part in (d.small, d.medium, d.large, d.fusion):
        assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in part.parameters())


def test_level_binding_not_symmetric():
    d = _dec()
    f = _feats()
    base = d(f, 32)
    # swap two same-shaped feature sets between samples of one level only
    g = list(f)
    g[2] = f[2].flip(0)
    assert not torch.allclose(base, d(g, 32))
    h = list(f)
    h[0] = torch.randn_like(f[0])
    assert not torch.allclose(base, d(h, 32))


def test_batch_order_equivariance():
    d = _dec()
    f = _feats(b=3)
    perm = torch.tensor([2, 0, 1])
    assert torch.allclose(d([x[perm] for x in f], 32), d(f, 32)[perm], atol=1e-6)


def test_contract_errors():
    d = _dec()
    f = _feats()
    with pytest.raises(ValueError):
        d(f[:3], 32)
    with pytest.raises(ValueError):
        d([torch.randn(2, 5, 16, 16)] + f[1:], 32)
    with pytest.raises(ValueError):
        d([torch.randn(2, 4, 12, 12)] + f[1:], 32)
