"""Soft self-binarization vs hard sign+STE training on the blob task over several seeds.

Writes one CSV row per (seed, mode) with final accuracies and the share of
soft-weight mass near +-1, then prints how often Soft matched or beat HardSTE.
"""

import argparse
from pathlib import Path

from sbnn.config import RunConfig
from sbnn.cli import dataset_for
from sbnn.graph import build_model
from sbnn.io import write_csv
from sbnn.selfbin import NuSchedule, TrainConfig, mass_near_binary, train


def run(cfg: RunConfig, mode: str, seed: int):
    cfg = cfg.replace(mode=mode, seed=seed)
    data = dataset_for(cfg)
    model = build_model(cfg.arch, data.input_shape, data.n_classes, mode, seed=seed)
    res = train(model, data, NuSchedule.for_training(cfg.epochs), TrainConfig(cfg.epochs, cfg.batch_size, seed=seed))
    mass = min(mass_near_binary(layer.weights, model.nu_final) for layer in model.weighted)
    return res.metrics[-1], mass


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/blobs.cfg")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--modes", default="Soft,HardSTE,HardSTEWithAlpha")
    p.add_argument("--out", default="runs/soft_vs_hard.csv")
    args = p.parse_args()
    cfg = RunConfig.load(args.config)
    modes = args.modes.split(",")
    rows, acc = [], {}
    for seed in range(args.seeds):
        for mode in modes:
            m, mass = run(cfg, mode, seed)
            acc[seed, mode] = m.val_acc
            rows.append([seed, mode, m.train_acc, m.val_acc, mass])
            print(f"seed={seed} {mode:17s} train={m.train_acc:.3f} val={m.val_acc:.3f} min_mass={mass:.3f}")
    write_csv(Path(args.out), ["seed", "mode", "train_acc", "val_acc", "min_mass_near_binary"], rows)
    if {"Soft", "HardSTE"} <= set(modes):
        wins = sum(acc[s, "Soft"] >= acc[s, "HardSTE"] for s in range(args.seeds))
        print(f"Soft >= HardSTE in {wins}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
