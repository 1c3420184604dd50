import csv
import json

import numpy as np
import pytest
from PIL import Image

from condseg import cli
from condseg.core import load_config

TINY = ["--set", "image_size=32", "--set", "channel_widths=[4,8,8,8]", "--set", "epochs_stage1=1",
        "--set", "epochs_stage2=1", "--set", "synth.n_images=10", "--set", "synth.size=32"]


def run(args, capsys=None):
    code = cli.main([str(a) for a in args])
    out = capsys.readouterr() if capsys else None
    return code, out


def test_init_config_roundtrip(tmp_path):
    path = tmp_path / "cfg.json"
    assert run(["init-config", "--out", path, "--set", "K=5", "--seed", 3])[0] == 0
    cfg = load_config(path)
    assert cfg.K == 5 and cfg.seed == 3


@pytest.mark.parametrize("override,field", [("t=1.5", "t in (0,1)"), ("K=2", "K must be odd"),
                                            ("windw=3", "windw"), ("synth.sizes=3", "sizes")])
def test_config_errors_exit_1_and_name_field(tmp_path, capsys, override, field):
    code, out = run(["train-stage1", "--data", "synth", "--out", tmp_path / "r", "--set", override],
                    capsys)
    assert code == 1 and field in out.err
    assert not (tmp_path / "r").exists()


def test_usage_error_exit_1(capsys):
    code, _ = run(["train-stage1"], capsys)
    assert code == 1
    assert run(["bogus"], capsys)[0] == 1


def test_missing_data_dir(tmp_path, capsys):
    code, out = run(["train-stage1", "--data", tmp_path / "nope", "--out", tmp_path / "r"] + TINY,
                    capsys)
    assert code == 1 and "nope" in out.err


def test_train_eval_predict_pipeline(tmp_path, capsys):
    s1, s2 = tmp_path / "s1", tmp_path / "s2"
    code, out = run(["train-stage1", "--data", "synth", "--out", s1, "--plot"] + TINY, capsys)
    assert code == 0, out.err
    manifest = json.loads((s1 / "manifest.json").read_text())
    assert manifest["command"][:2] == ["condseg", "train-stage1"]
    assert manifest["config"]["image_size"] == 32 and manifest["seed"] == 0
    assert {"git_describe", "start_time", "outputs"} <= set(manifest)
    assert json.loads((s1 / "run_end.json").read_text())["status"] == "ok"
    for name in ("records.csv", "timing.csv", "convergence.png", "net0.safetensors", "net0.json"):
        assert (s1 / name).exists(), name

    # refuses to clobber, unless forced
    code, out = run(["train-stage1", "--data", "synth", "--out", s1] + TINY, capsys)
    assert code == 1 and "--force" in out.err
    assert run(["train-stage1", "--data", "synth", "--out", s1, "--force"] + TINY, capsys)[0] == 0

    code, out = run(["train-stage2", "--data", "synth", "--out", s2,
                     "--encoder-ckpt", s1 / "net0.safetensors"] + TINY, capsys)
    assert code == 0, out.err
    assert "mIoU=" in out.out and "mDSC=" in out.out
    rows = list(csv.DictReader(open(s2 / "val_per_image.csv")))
    assert len(rows) == 2 and set(rows[0]) == {"image_id", "iou", "dsc", "recall", "precision"}
    assert json.loads((s2 / "manifest.json").read_text())["mode"] == "two-stage"

    ckpt = s2 / "condseg.safetensors"
    code, out = run(["eval", "--ckpt", ckpt, "--data", "synth", "--out-csv", tmp_path / "e.csv"],
                    capsys)
    assert code == 0 and (tmp_path / "e.csv").exists()
    assert run(["eval", "--ckpt", ckpt, "--data", "synth", "--t", 1.5], capsys)[0] == 1
    assert run(["eval", "--ckpt", tmp_path / "missing", "--data", "synth"], capsys)[0] == 2

    img = tmp_path / "in.png"
    Image.fromarray((np.random.default_rng(0).random((40, 50, 3)) * 255).astype(np.uint8)).save(img)
    mask = tmp_path / "mask.png"
    assert run(["predict", "--ckpt", ckpt, "--image", img, "--out-mask", mask,
                "--original-size"], capsys)[0] == 0
    arr = np.asarray(Image.open(mask))
    assert arr.shape == (40, 50) and set(np.unique(arr)) <= {0, 255}


def test_folder_data(tmp_path, capsys):
    assert run(["synth", "--out", tmp_path / "ds"] + TINY, capsys)[0] == 0
    assert len(list((tmp_path / "ds" / "images").iterdir())) == 10
    code, out = run(["train-stage2", "--data", tmp_path / "ds", "--out", tmp_path / "r"] + TINY,
                    capsys)
    assert code == 0, out.err


def test_window_sweep_rows(tmp_path, capsys):
    code, out = run(["sweep", "--kind", "window", "--grid", "1,3", "--data", "synth",
                     "--out", tmp_path / "sw"] + TINY, capsys)
    assert code == 0, out.err
    rows = list(csv.DictReader(open(tmp_path / "sw" / "sweep.csv")))
    assert [r["value"] for r in rows] == ["1", "3"] and all(r["status"] == "ok" for r in rows)


def test_sweep_rejects_bad_grid(tmp_path, capsys):
    code, out = run(["sweep", "--kind", "window", "--grid", "1,2", "--data", "synth",
                     "--out", tmp_path / "sw"] + TINY, capsys)
    assert code == 1 and "2" in out.err
    code, out = run(["sweep", "--kind", "threshold", "--grid", "0.5,x", "--data", "synth",
                     "--out", tmp_path / "sw"] + TINY, capsys)
    assert code == 1


def test_sweep_records_failures_and_continues(tmp_path, capsys, monkeypatch):
    real = cli.run_strategy

    def flaky(name, cfg, train, val, out_dir):
        if cfg.t == 0.3:
            raise RuntimeError("boom")
        return real(name, cfg, train, val, out_dir)

    monkeypatch.setattr(cli, "run_strategy", flaky)
    code, out = run(["sweep", "--kind", "threshold", "--grid", "0.3,0.5", "--data", "synth",
                     "--out", tmp_path / "sw"] + TINY, capsys)
    assert code == 2
    rows = list(csv.DictReader(open(tmp_path / "sw" / "sweep.csv")))
    assert rows[0]["status"] == "failed: boom" and rows[1]["status"] == "ok"


def test_point_config_kinds():
    from condseg.core import TrainConfig

    base = TrainConfig()
    assert cli.point_config(base, "cons-loss", "kl") == (base.replace(cons_loss="kl"), "net0-cr")
    cfg, strat = cli.point_config(base, "encoder", "paper-resnet50-shape")
    assert cfg.channel_widths == [256, 512, 1024, 2048] and strat == "two-stage-cr"
    assert cli.point_config(base, "stage1-epochs", 7)[0].epochs_stage1 == 7


def test_thread_env(monkeypatch, tmp_path):
    import torch

    before = torch.get_num_threads()
    monkeypatch.setenv("CONDSEG_THREADS", "1")
    run(["init-config", "--out", tmp_path / "c.json"])
    assert torch.get_num_threads() == 1
    torch.set_num_threads(before)
