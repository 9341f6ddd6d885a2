"""Command-line entry point: train -> export -> infer, plus bench and hist.

Errors exit with status 2 and a single stderr line ``error: <Category>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .binrt import encode_input, run_frozen
from .config import RunConfig
from .data import load_dataset
from .errors import SbnnError
from .freeze import freeze_model, load_frozen, save_frozen
from .graph import build_model
from .io import atomic_write_bytes, load_checkpoint, save_checkpoint, write_csv
from .selfbin import NuSchedule, TrainConfig, histogram_snapshot, train
from .selfbin.trainer import EpochMetrics

OUT_DIR_ENV = "SBNN_OUT_DIR"
HIST_FIELDS = ("layer", "epoch", "bin_center", "pre_density", "post_density")

log = logging.getLogger("sbnn")


def _out_dir(default) -> Path:
    return Path(os.environ.get(OUT_DIR_ENV) or default)


def dataset_for(cfg: RunConfig):
    return load_dataset(
        cfg.dataset or None,
        cfg.format,
        seed=cfg.seed,
        n=cfg.n_samples,
        val_fraction=cfg.val_fraction,
        blob_std=cfg.blob_std,
        blob_sep=cfg.blob_sep,
        limit=cfg.limit or None,
    )


def cmd_train(cfg: RunConfig, out_dir=None) -> dict:
    out = _out_dir(out_dir or cfg.out_dir)
    data = dataset_for(cfg)
    medians = data.channel_medians() if cfg.input_mode == "median" else None
    model = build_model(cfg.arch, data.input_shape, data.n_classes, cfg.mode, cfg.input_mode, medians, seed=cfg.seed)
    schedule = NuSchedule.for_training(cfg.epochs, cfg.nu_start, cfg.nu_end)
    tcfg = TrainConfig(cfg.epochs, cfg.batch_size, cfg.lr0, cfg.lr_decay, cfg.seed, cfg.augment, cfg.hist_bins)
    wanted = set(cfg.checkpoint_epoch_list)
    text = cfg.to_text()

    def on_epoch(m, mdl):
        if m.epoch in wanted:
            save_checkpoint(out / f"checkpoint_e{m.epoch:03d}.npz", mdl, m.epoch, None, text)

    result = train(model, data, schedule, tcfg, on_epoch)
    write_csv(out / "metrics.csv", EpochMetrics.FIELDS, [m.row() for m in result.metrics])
    write_csv(out / "hist.csv", HIST_FIELDS, result.histograms)
    save_checkpoint(out / "checkpoint.npz", model, cfg.epochs - 1, result.adam, text)
    atomic_write_bytes(out / "config.txt", text.encode())
    final = result.metrics[-1]
    print(f"trained epochs={cfg.epochs} nu={final.nu!r} train_acc={final.train_acc:.4f} val_acc={final.val_acc:.4f}")
    return {"out_dir": out, "result": result}


def cmd_export(checkpoint, out, alpha: bool = False):
    model, _, meta = load_checkpoint(checkpoint)
    if not alpha and meta.get("config"):
        alpha = RunConfig.from_text(meta["config"]).use_alpha_fold
    fm = freeze_model(model, use_alpha=alpha)
    save_frozen(fm, out)
    print(f"exported {len(fm.layers)} layers to {out}")
    return fm


def cmd_infer(model_path, cfg: RunConfig, split: str = "val", out=None):
    fm = load_frozen(model_path)
    data = dataset_for(cfg)
    s = data.split(split)
    scores = run_frozen(fm, encode_input(fm, s.codes))
    pred = np.argmax(scores, axis=1)
    acc = float(np.mean(pred == s.labels)) if len(s) else float("nan")
    out = Path(out) if out else _out_dir(cfg.out_dir) / "predictions.csv"
    header = ["image_index", "argmax"] + [f"score_{k}" for k in range(scores.shape[1])]
    write_csv(out, header, ([i, int(p), *map(int, row)] for i, (p, row) in enumerate(zip(pred, scores))))
    print(f"accuracy={acc:.6f} n={len(s)} predictions={out}")
    return acc, scores


def cmd_bench(dims=(16, 256, 256), batches=(1, 2, 4, 8), out_dir=None, trials=30, warmup=5):
    results = bench_mod.run_bench(dims=dims, batch_sizes=batches, trials=trials, warmup=warmup)
    out = _out_dir(out_dir or "runs/bench")
    write_csv(out / "bench.csv", bench_mod.BenchResult.CSV_FIELDS, [r.row() for r in results])
    atomic_write_bytes(out / "bench_plot.json", json.dumps(bench_mod.plot_data(results), indent=1).encode())
    for r in results:
        print(f"{r.variant:9s} batch={r.batch_size:<4d} median={r.median_ns / 1e6:9.3f} ms  out={r.output_bytes} B")
    return results


def cmd_hist(checkpoints, out, bins: int = 100):
    rows = []
    for path in checkpoints:
        model, _, meta = load_checkpoint(path)
        for layer in model.weighted:
            if layer.weights.binarize:
                c, pre, post = histogram_snapshot(layer.weights, bins, model.nu_final)
                rows.extend((layer.name, meta["epoch"], *r) for r in zip(c, pre, post))
    write_csv(out, HIST_FIELDS, rows)
    print(f"wrote {len(rows)} histogram rows to {out}")
    return rows


def _dims(text: str) -> tuple:
    parts = [int(p) for p in text.lower().split("x")]
    if len(parts) == 2:
        parts = [1] + parts
    if len(parts) != 3 or min(parts) <= 0:
        raise argparse.ArgumentTypeError("dims must look like CxHxW")
    return tuple(parts)


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sbnn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir")

    e = sub.add_parser("export", help="freeze a checkpoint into a binary model file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--alpha", action="store_true", help="fold the per-channel alpha scale into thresholds")

    i = sub.add_parser("infer", help="run a frozen model over a dataset split")
    i.add_argument("--model", required=True)
    i.add_argument("--data", default="", help="dataset path (ignored for synthetic-blobs)")
    i.add_argument("--format")
    i.add_argument("--config", help="take dataset settings from this run config")
    i.add_argument("--split", default="val", choices=("train", "val", "test"))
    i.add_argument("--seed", type=int)
    i.add_argument("--n-samples", type=int)
    i.add_argument("--val-fraction", type=float)
    i.add_argument("--out")

    b = sub.add_parser("bench", help="time BN, SBN and BinaryBN")
    b.add_argument("--dims", type=_dims, default=(16, 256, 256))
    b.add_argument("--batches", type=_ints, default=(1, 2, 4, 8))
    b.add_argument("--trials", type=int, default=30)
    b.add_argument("--out-dir")

    h = sub.add_parser("hist", help="weight histograms from checkpoints")
    h.add_argument("--checkpoints", nargs="+", required=True)
    h.add_argument("--bins", type=int, default=100)
    h.add_argument("--out", default="hist.csv")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "train":
            cmd_train(RunConfig.load(args.config), args.out_dir)
        elif args.command == "export":
            cmd_export(args.checkpoint, args.out, args.alpha)
        elif args.command == "infer":
            cfg = RunConfig.load(args.config) if args.config else RunConfig()
            over = {"dataset": args.data or cfg.dataset}
            for key in ("format", "seed", "n_samples", "val_fraction"):
                if getattr(args, key) is not None:
                    over[key] = getattr(args, key)
            cmd_infer(args.model, cfg.replace(**over), args.split, args.out)
        elif args.command == "bench":
            cmd_bench(args.dims, args.batches, args.out_dir, args.trials)
        elif args.command == "hist":
            cmd_hist(args.checkpoints, args.out, args.bins)
    except SbnnError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: IOError: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
