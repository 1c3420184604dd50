"""Command-line entry point: ``condseg <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch
from PIL import Image

from .core import ConfigError, TrainConfig, dump_config, load_config, validate_config
from .data import gen_synthetic, load_dataset_dir, load_image, save_folder, split
from .losses import binarize
from .metrics import METRIC_NAMES, write_per_image_csv
from .train import (
    TrainingError, evaluate, load_model, plot_records, predict_probs, run_strategy,
    train_stage1, train_stage2, write_records_csv,
)

log = logging.getLogger("condseg")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

SWEEP_KINDS = ("threshold", "window", "stage1-epochs", "cons-loss", "encoder")
ENCODER_WIDTHS = {"paper-resnet50-shape": [256, 512, 1024, 2048]}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def build_config(args) -> TrainConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else TrainConfig()
    d = cfg.to_dict()
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        target = d
        *parents, leaf = key.split(".")
        for p in parents:
            if p not in target or not isinstance(target[p], dict):
                raise ConfigError(f"unknown config section {p!r}")
            target = target[p]
        if leaf not in target:
            raise ConfigError(f"unknown config key {key!r}")
        target[leaf] = _parse_value(raw)
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "t", None) is not None:
        d["t"] = args.t
    cfg = TrainConfig.from_dict(d)
    errs = validate_config(cfg)
    if errs:
        raise ConfigError("invalid config: " + "; ".join(errs))
    return cfg


def load_data(spec: str, cfg: TrainConfig):
    """``synth`` generates ``cfg.synth``; anything else is an images/ + masks/ directory."""
    if spec == "synth":
        synth = cfg.synth
        if synth.size != cfg.image_size:
            synth = type(synth)(**{**synth.__dict__, "size": cfg.image_size})
        records = gen_synthetic(synth)
    else:
        if not Path(spec).is_dir():
            raise ConfigError(f"--data {spec!r} is neither 'synth' nor a directory")
        records = load_dataset_dir(spec, cfg.image_size)
    return split(records, cfg.split_fractions, cfg.seed)


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             capture_output=True, text=True, timeout=10,
                             cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out: Path, argv: Sequence[str], cfg: TrainConfig, outputs: dict,
                   force: bool, extra: dict | None = None) -> None:
    """Write ``manifest.json`` once, before any other output; refuse to clobber."""
    path = out / "manifest.json"
    if path.exists() and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite the run")
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": ["condseg", *argv],
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "git_describe": _git_describe(),
        "start_time": _now(),
        "outputs": {k: str(v) for k, v in outputs.items()},
    }
    if extra:
        manifest.update(extra)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "run_end.json").unlink(missing_ok=True)


def _finish(out: Path, status: str = "ok") -> None:
    (out / "run_end.json").write_text(json.dumps({"end_time": _now(), "status": status}) + "\n")


LABELS = {"iou": "mIoU", "dsc": "mDSC", "recall": "recall", "precision": "precision"}


def _print_means(means: dict) -> None:
    print("  ".join(f"{LABELS[k]}={means[k]:.4f}" for k in METRIC_NAMES))


# ---------------------------------------------------------------------------
# commands


def cmd_train_stage1(args, argv) -> int:
    cfg = build_config(args)
    out = Path(args.out)
    write_manifest(out, argv, cfg, {"checkpoint": out / "net0.safetensors",
                                    "records": out / "records.csv"}, args.force,
                   {"stage": 1})
    train, val, _ = load_data(args.data, cfg)
    result = train_stage1(cfg, train, val, out)
    write_records_csv(result.records, out / "records.csv")
    write_records_csv(result.records, out / "timing.csv", timing=True)
    if args.plot:
        plot_records(result.records, out / "convergence.png")
    print(f"best epoch {result.best_epoch}; checkpoint {result.checkpoint}")
    if result.best_metrics:
        _print_means(result.best_metrics)
    _finish(out)
    return EXIT_OK


def cmd_train_stage2(args, argv) -> int:
    cfg = build_config(args)
    out = Path(args.out)
    mode = "two-stage" if args.encoder_ckpt else "one-stage"
    write_manifest(out, argv, cfg, {"checkpoint": out / "condseg.safetensors",
                                    "records": out / "records.csv",
                                    "per_image": out / "val_per_image.csv"}, args.force,
                   {"stage": 2, "mode": mode, "encoder_ckpt": args.encoder_ckpt})
    train, val, _ = load_data(args.data, cfg)
    result = train_stage2(cfg, train, val, out, encoder_ckpt=args.encoder_ckpt)
    write_records_csv(result.records, out / "records.csv")
    write_records_csv(result.records, out / "timing.csv", timing=True)
    if args.plot:
        plot_records(result.records, out / "convergence.png")
    means, per_image = evaluate(result.checkpoint, val, cfg)
    write_per_image_csv(out / "val_per_image.csv", [r.image_id for r in val], per_image)
    print(f"{mode}: best epoch {result.best_epoch}; checkpoint {result.checkpoint}")
    _print_means(means)
    _finish(out)
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    _, saved = load_model(args.ckpt)
    cfg = load_config(args.config) if args.config else saved
    d = cfg.to_dict()
    if args.t is not None:
        d["t"] = args.t
    cfg = TrainConfig.from_dict(d)
    errs = validate_config(cfg)
    if errs:
        raise ConfigError("invalid config: " + "; ".join(errs))
    train, val, test = load_data(args.data, cfg)
    pool = {"train": train, "val": val, "test": test, "all": train + val + test}[args.split]
    means, per_image = evaluate(args.ckpt, pool, cfg)
    _print_means(means)
    if args.out_csv:
        write_per_image_csv(args.out_csv, [r.image_id for r in pool], per_image)
    return EXIT_OK


def cmd_predict(args, argv) -> int:
    model, saved = load_model(args.ckpt)
    t = saved.t if args.t is None else args.t
    if not 0 < t < 1:
        raise ConfigError(f"invalid config: t in (0,1), got {t}")
    with Image.open(args.image) as im:
        orig_size = im.size
    x = torch.from_numpy(load_image(args.image, saved.image_size))[None]
    mask = binarize(predict_probs(model, x), t)[0, 0].numpy().astype(np.uint8) * 255
    img = Image.fromarray(mask).resize(orig_size, Image.NEAREST) if args.original_size else \
        Image.fromarray(mask)
    img.save(args.out_mask)
    return EXIT_OK


def _grid_values(kind: str, grid: str) -> list:
    items = [g.strip() for g in grid.split(",") if g.strip()]
    if not items:
        raise UsageError("--grid is empty")
    try:
        if kind == "threshold":
            vals = [float(v) for v in items]
            bad = [v for v in vals if not 0 < v < 1]
        elif kind in ("window", "stage1-epochs"):
            vals = [int(v) for v in items]
            bad = [v for v in vals if (v < 1 or v % 2 == 0) if kind == "window"] + \
                  [v for v in vals if v < 0 and kind == "stage1-epochs"]
        elif kind == "cons-loss":
            vals = items
            bad = [v for v in vals if v not in ("bce", "kl", "js")]
        else:
            from .backbone import ENCODERS
            vals = items
            bad = [v for v in vals if v not in ENCODERS]
    except ValueError as exc:
        raise ConfigError(f"bad --grid for {kind}: {exc}") from exc
    if bad:
        raise ConfigError(f"invalid grid values for {kind}: {bad}")
    return vals


def point_config(cfg: TrainConfig, kind: str, value) -> tuple[TrainConfig, str]:
    """Config and training strategy for one sweep point."""
    if kind == "threshold":
        return cfg.replace(t=value), "two-stage-cr"
    if kind == "window":
        return cfg.replace(K=value), "two-stage-cr"
    if kind == "stage1-epochs":
        return cfg.replace(epochs_stage1=value), "two-stage-cr"
    if kind == "cons-loss":
        return cfg.replace(cons_loss=value), "net0-cr"
    widths = ENCODER_WIDTHS.get(value, cfg.channel_widths)
    cdfa = cfg.cdfa_widths or ([min(w, 64) for w in widths] if value in ENCODER_WIDTHS else None)
    return cfg.replace(encoder_id=value, channel_widths=list(widths), cdfa_widths=cdfa), "two-stage-cr"


def _run_point(kind, value, cfg_dict, data_spec, out_dir) -> dict:
    cfg = TrainConfig.from_dict(cfg_dict)
    pcfg, strategy = point_config(cfg, kind, value)
    row = {"kind": kind, "value": value, "strategy": strategy}
    try:
        errs = validate_config(pcfg)
        if errs:
            raise ConfigError("; ".join(errs))
        train, val, _ = load_data(data_spec, pcfg)
        res = run_strategy(strategy, pcfg, train, val, out_dir)
        row.update({k: res[k] for k in METRIC_NAMES}, status="ok", checkpoint=res["checkpoint"])
    except Exception as exc:  # recorded per point; the sweep continues
        log.error("sweep point %s=%s failed: %s", kind, value, exc)
        row.update({k: "" for k in METRIC_NAMES}, status=f"failed: {exc}", checkpoint="")
    return row


def cmd_sweep(args, argv) -> int:
    cfg = build_config(args)
    values = _grid_values(args.kind, args.grid)
    out = Path(args.out)
    write_manifest(out, argv, cfg, {"comparison": out / "sweep.csv"}, args.force,
                   {"sweep": {"kind": args.kind, "grid": values}})
    jobs = [(args.kind, v, cfg.to_dict(), args.data, out / f"{args.kind}_{v}") for v in values]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            rows = list(ex.map(_run_point, *zip(*jobs)))
    else:
        rows = [_run_point(*j) for j in jobs]
    fields = ["kind", "value", "strategy", *METRIC_NAMES, "status", "checkpoint"]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fields)
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['kind']}={r['value']}: {r['status']} "
              + " ".join(f"{k}={r[k]:.4f}" for k in METRIC_NAMES if r[k] != ""))
    failed = any(r["status"] != "ok" for r in rows)
    _finish(out, "failed" if failed else "ok")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_synth(args, argv) -> int:
    cfg = build_config(args)
    synth = cfg.synth
    save_folder(gen_synthetic(synth), args.out)
    print(f"wrote {synth.n_images} images to {args.out}")
    return EXIT_OK


def cmd_init_config(args, argv) -> int:
    Path(args.out).write_text(dump_config(build_config(args)))
    return EXIT_OK


# ---------------------------------------------------------------------------


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (defaults when omitted)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key, e.g. --set K=5 or --set synth.seed=3")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="condseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, fn, help_ in (("train-stage1", cmd_train_stage1, "stage-1 encoder training"),
                            ("train-stage2", cmd_train_stage2, "stage-2 full-network training")):
        p = sub.add_parser(name, help=help_)
        _add_config_args(p)
        p.add_argument("--data", required=True, help="'synth' or a directory with images/ and masks/")
        p.add_argument("--out", required=True)
        p.add_argument("--force", action="store_true")
        p.add_argument("--plot", action="store_true", help="also render convergence.png")
        if name == "train-stage2":
            p.add_argument("--encoder-ckpt", help="stage-1 checkpoint; omit for one-stage training")
        p.set_defaults(fn=fn)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--t", type=float)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="val")
    p.add_argument("--out-csv")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="write a binary PNG mask for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-mask", required=True)
    p.add_argument("--t", type=float)
    p.add_argument("--original-size", action="store_true", help="resize the mask back to the input size")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("sweep", help="ablation sweep, one run per grid point")
    _add_config_args(p)
    p.add_argument("--kind", required=True, choices=SWEEP_KINDS)
    p.add_argument("--grid", required=True, help="comma-separated values")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("synth", help="write the configured synthetic dataset as PNG folders")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("init-config", help="write a config file with defaults and overrides")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_init_config)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    threads = os.environ.get("CONDSEG_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.fn(args, argv)
    except (UsageError, ConfigError) as exc:
        print(f"condseg: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, OSError, ValueError, KeyError) as exc:
        print(f"condseg: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
