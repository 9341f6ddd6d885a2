"""Train a model from a config, freeze it, and compare frozen predictions with the float model.

Reports agreement of the integer-only frozen model with the soft model at the
final nu, with the float sign view, and (for the alpha fold) with the float
alpha-scaled view, plus the accuracy of each.
"""

import argparse

import numpy as np

from sbnn.binrt import encode_input, run_frozen
from sbnn.cli import dataset_for
from sbnn.config import RunConfig
from sbnn.freeze import freeze_model, to_bytes
from sbnn.graph import build_model
from sbnn.selfbin import NuSchedule, TrainConfig, train


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/blobs.cfg")
    p.add_argument("--seed", type=int)
    args = p.parse_args()
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    data = dataset_for(cfg)
    medians = data.channel_medians() if cfg.input_mode == "median" else None
    model = build_model(cfg.arch, data.input_shape, data.n_classes, cfg.mode, cfg.input_mode, medians, seed=cfg.seed)
    tcfg = TrainConfig(cfg.epochs, cfg.batch_size, cfg.lr0, cfg.lr_decay, cfg.seed, cfg.augment, cfg.hist_bins)
    train(model, data, NuSchedule.for_training(cfg.epochs, cfg.nu_start, cfg.nu_end), tcfg)

    split = data.val if data.val is not None else data.train
    x, y = split.tensor(), split.labels
    nu = model.nu_final
    soft = model.predict(x, nu)
    for alpha in (False, True):
        fm = freeze_model(model, use_alpha=alpha)
        frozen = run_frozen(fm, encode_input(fm, split.codes)).argmax(1)
        view = model.predict(x, nu, binary=True, use_alpha=alpha)
        print(f"alpha_fold={alpha!s:5s} size={len(to_bytes(fm))} B  "
              f"agree_soft={np.mean(frozen == soft):.4f} agree_sign_view={np.mean(frozen == view):.4f}  "
              f"acc_frozen={np.mean(frozen == y):.4f}")
    print(f"acc_soft={np.mean(soft == y):.4f}")


if __name__ == "__main__":
    main()
