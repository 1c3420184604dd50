import numpy as np
import pytest
import torch

from condseg.backbone import init_module
from condseg.core import seeded_rng
from condseg.losses import complementarity_loss, dynamic_penalties, mask_loss
from condseg.sid import SID, AuxHead, aux_head, sid_forward


def _parts(c=8, seed=0):
    sid, head = SID(c), AuxHead(c)
    init_module(sid, seeded_rng(seed, "sid"))
    init_module(head, seeded_rng(seed, "aux"))
    return sid, head


def test_shapes_and_ranges():
    sid, head = _parts()
    f4 = torch.randn(2, 8, 2, 2)
    d = sid_forward(f4, sid)
    assert d.f_fg.shape == d.f_bg.shape == d.f_uc.shape == f4.shape
    assert not torch.equal(d.f_fg, d.f_bg)
    ms = aux_head(d, 64, head)
    for m in ms:
        assert m.shape == (2, 1, 64, 64) and m.min() > 0 and m.max() < 1


def test_identical_branches_give_identical_outputs():
    sid, _ = _parts()
    sid.bg.load_state_dict(sid.fg.state_dict())
    sid.eval()
    d = sid(torch.randn(1, 8, 2, 2))
    assert torch.equal(d.f_fg, d.f_bg)


def test_zeroed_collapse_gives_half():
    sid, head = _parts()
    with torch.no_grad():
        for b in (head.fg, head.bg, head.uc):
            b.collapse.weight.zero_()
            b.collapse.bias.zero_()
    for m in head(sid(torch.randn(1, 8, 2, 2)), 32):
        assert torch.equal(m, torch.full_like(m, 0.5))


def test_errors():
    sid, head = _parts()
    with torch.no_grad():
        with pytest.raises(ValueError):
            sid(torch.randn(1, 4, 2, 2))
        with pytest.raises(ValueError):
            head(sid(torch.randn(1, 8, 2, 2)), 33)


def test_compl_gradient_reaches_all_branches():
    sid, head = _parts()
    ms = head(sid(torch.randn(2, 8, 2, 2)), 16)
    complementarity_loss(*ms).value.backward()
    for name, mod in (("fg", head.fg), ("bg", head.bg), ("uc", head.uc),
                      ("sid.fg", sid.fg), ("sid.bg", sid.bg), ("sid.uc", sid.uc)):
        assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in mod.parameters()), name


def _moving_average(xs, n=10):
    return np.convolve(xs, np.ones(n) / n, mode="valid")


def test_complementarity_trainability():
    torch.manual_seed(0)
    sid, head = _parts(seed=1)
    f4 = torch.randn(2, 8, 2, 2)
    opt = torch.optim.Adam(list(sid.parameters()) + list(head.parameters()), lr=1e-3)
    hist = []
    for _ in range(200):
        v = complementarity_loss(*head(sid(f4), 16)).value
        opt.zero_grad()
        v.backward()
        opt.step()
        hist.append(v.item())
    ma = _moving_average(hist)
    assert np.all(np.diff(ma) < 0), "moving average of L_compl must strictly decrease"


def test_supervised_decoupling():
    torch.manual_seed(0)
    sid, head = _parts(seed=2)
    f4 = torch.randn(2, 8, 2, 2)
    y = torch.zeros(2, 1, 16, 16)
    y[:, :, 4:12, 3:10] = 1
    opt = torch.optim.Adam(list(sid.parameters()) + list(head.parameters()), lr=1e-3)

    def overlap():
        with torch.no_grad():
            fg, bg, _ = head(sid(f4), 16)
            return float((fg * bg).mean())

    start = overlap()
    for _ in range(200):
        fg, bg, uc = head(sid(f4), 16)
        b1, b2 = dynamic_penalties(fg, bg)
        v = b1 * mask_loss(y, fg).value + b2 * mask_loss(1 - y, bg).value + \
            complementarity_loss(fg, bg, uc).value
        opt.zero_grad()
        v.backward()
        opt.step()
    assert overlap() < start
