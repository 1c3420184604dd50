import json

import numpy as np
import pytest
import torch
from torch import nn

from condseg.core import (
    ARCH_KEYS, AugPolicy, ConfigError, ParamStore, SynthSpec, TrainConfig, load_config,
    save_config, seeded_rng, validate_config,
)


def test_seeded_streams_reproducible_and_independent():
    a = seeded_rng(3, "x").random(5)
    assert np.array_equal(a, seeded_rng(3, "x").random(5))
    assert not np.array_equal(a, seeded_rng(3, "y").random(5))
    assert not np.array_equal(a, seeded_rng(4, "x").random(5))


def test_default_config_valid():
    assert validate_config(TrainConfig()) == []


def test_validation_collects_every_error():
    cfg = TrainConfig(K=4, t=1.5, batch_size=0)
    errs = validate_config(cfg)
    text = "; ".join(errs)
    assert len(errs) >= 3
    assert "K" in text and "t" in text and "batch_size" in text


@pytest.mark.parametrize("change", [
    dict(image_size=48), dict(channel_widths=[4, 8]), dict(norm="layer"),
    dict(cons_loss="mse"), dict(split_fractions=(0.5, 0.2, 0.2)), dict(lr_stage1=-1.0),
    dict(encoder_id="vgg"), dict(augment=AugPolicy(p_blur=2.0)),
    dict(synth=SynthSpec(radius_range=(0.3, 0.1))),
])
def test_invalid_fields_named(change):
    errs = validate_config(TrainConfig(**change))
    key = next(iter(change))
    assert errs and any(key.split("_")[0] in e for e in errs), errs


def test_roundtrip(tmp_path):
    cfg = TrainConfig(K=5, cdfa_widths=[4, 4, 4, 4], augment=AugPolicy.identity(),
                      synth=SynthSpec(n_images=7, cooccurrence=True))
    path = tmp_path / "cfg.json"
    save_config(cfg, path)
    assert load_config(path) == cfg
    assert load_config(path).hash() == cfg.hash()


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"K": 3, "windw": 5}))
    with pytest.raises(ConfigError, match="windw"):
        load_config(path)
    path.write_text(json.dumps({"synth": {"sizes": 3}}))
    with pytest.raises(ConfigError, match="sizes"):
        load_config(path)


def test_arch_hash_ignores_training_keys():
    a, b = TrainConfig(), TrainConfig(lr_stage1=1.0, seed=7)
    assert a.hash(ARCH_KEYS) == b.hash(ARCH_KEYS) and a.encoder_hash() == b.encoder_hash()
    assert a.hash(ARCH_KEYS) != TrainConfig(K=5).hash(ARCH_KEYS)
    assert a.encoder_hash() == TrainConfig(K=5).encoder_hash()


def test_param_store_load_and_errors():
    m = nn.Sequential(nn.Conv2d(2, 3, 1), nn.BatchNorm2d(3))
    store = ParamStore.from_module(m)
    assert "1.running_mean" in store and not any("num_batches" in n for n in store.names())
    assert set(store.names(trainable_only=True)) == {"0.weight", "0.bias", "1.weight", "1.bias"}
    src = {n: torch.randn_like(t) for n, t in store.tensors().items()}
    store.load(src)
    assert all(torch.equal(store[n], src[n]) for n in src)
    with pytest.raises(KeyError):
        store.load({k: v for k, v in src.items() if k != "0.bias"})
    with pytest.raises(ValueError):
        store.load({**src, "0.bias": torch.zeros(5)})
    with pytest.raises(KeyError):
        store.load(src, prefix="nothing.")


def test_param_store_grad_slot():
    m = nn.Linear(2, 1)
    m(torch.ones(1, 2)).sum().backward()
    store = ParamStore.from_module(m)
    assert torch.equal(store.entries["bias"].grad, torch.ones(1))
