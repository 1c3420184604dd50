import numpy as np
import pytest
from PIL import Image

from condseg.core import SynthSpec
from condseg.data import (
    gen_synthetic, load_dataset_dir, low_contrast_spec, rasterize_ellipse, save_folder, split,
    to_tensors,
)


def test_rasterize_circle_area():
    m = rasterize_ellipse(64, 32, 32, 10, 10, 0.3)
    assert abs(m.sum() - np.pi * 100) < 12


def test_synthetic_masks_match_blobs_and_are_reproducible():
    spec = SynthSpec(n_images=6, size=32, seed=3)
    a, b = gen_synthetic(spec), gen_synthetic(spec)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.image, rb.image) and np.array_equal(ra.mask, rb.mask)
        union = np.zeros((32, 32), dtype=bool)
        for blob in ra.blobs:
            union |= rasterize_ellipse(32, *blob)
        assert np.array_equal(union, ra.mask[0].astype(bool)) and union.any()
        assert ra.image.shape == (3, 32, 32) and 0 <= ra.image.min() and ra.image.max() <= 1
    assert not np.array_equal(a[0].image, gen_synthetic(SynthSpec(n_images=1, size=32, seed=4))[0].image)


def _contrast(records):
    vals = []
    for r in records:
        m = r.mask[0].astype(bool)
        if m.all():
            continue
        vals.append(r.image[:, m].mean() - r.image[:, ~m].mean())
    return float(np.mean(vals))


def test_low_contrast_regime_is_harder():
    easy = gen_synthetic(SynthSpec(n_images=40, size=32))
    hard = gen_synthetic(low_contrast_spec(n_images=40, size=32))
    assert _contrast(hard) < 0.6 * _contrast(easy)


def test_cooccurrence_mode_runs():
    recs = gen_synthetic(SynthSpec(n_images=10, size=32, blob_count=(2, 4), cooccurrence=True))
    assert all(r.mask.any() for r in recs)


def test_invalid_spec():
    with pytest.raises(ValueError):
        gen_synthetic(SynthSpec(contrast_range=(0.5, 0.2)))


def test_split_deterministic_and_disjoint():
    items = list(range(50))
    tr, va, te = split(items, (0.7, 0.2, 0.1), seed=1)
    assert (len(tr), len(va), len(te)) == (35, 10, 5)
    assert sorted(tr + va + te) == items
    assert split(items, (0.7, 0.2, 0.1), seed=1) == (tr, va, te)
    assert split(items, (0.7, 0.2, 0.1), seed=2) != (tr, va, te)
    with pytest.raises(ValueError):
        split(items, (0.7, 0.2), seed=1)


def test_folder_roundtrip(tmp_path):
    recs = gen_synthetic(SynthSpec(n_images=3, size=32))
    save_folder(recs, tmp_path)
    loaded = load_dataset_dir(tmp_path, 32)
    assert [r.image_id for r in loaded] == sorted(r.image_id for r in recs)
    by_id = {r.image_id: r for r in recs}
    for r in loaded:
        assert np.array_equal(r.mask, by_id[r.image_id].mask)
        assert np.abs(r.image - by_id[r.image_id].image).max() <= 0.5 / 255 + 1e-6
    x, y = to_tensors(loaded)
    assert x.shape == (3, 3, 32, 32) and y.shape == (3, 1, 32, 32)


def test_missing_mask_named(tmp_path):
    save_folder(gen_synthetic(SynthSpec(n_images=2, size=32)), tmp_path)
    extra = tmp_path / "images" / "orphan.png"
    Image.new("RGB", (8, 8)).save(extra)
    with pytest.raises(FileNotFoundError, match="orphan.png"):
        load_dataset_dir(tmp_path, 32)


def test_unreadable_image(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    (tmp_path / "images" / "a.png").write_bytes(b"not a png")
    Image.new("L", (8, 8)).save(tmp_path / "masks" / "a.png")
    with pytest.raises(OSError, match="a.png"):
        load_dataset_dir(tmp_path, 32)
