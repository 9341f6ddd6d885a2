"""Hidden-width sweep on the blob task: frozen agreement and Soft-vs-HardSTE wins per width.

Even widths let a binary dense layer's integer pre-activation hit exactly zero,
where sign() and the soft model's tanh part ways; odd widths rule that out.
"""

import argparse

import numpy as np

from sbnn.binrt import encode_input, run_frozen
from sbnn.data import load_dataset
from sbnn.freeze import freeze_model
from sbnn.graph import build_model
from sbnn.selfbin import NuSchedule, TrainConfig, train


def fit(arch, mode, seed, epochs):
    data = load_dataset(fmt="synthetic-blobs", seed=seed, n=1000)
    model = build_model(arch, data.input_shape, data.n_classes, mode, seed=seed)
    res = train(model, data, NuSchedule.for_training(epochs), TrainConfig(epochs=epochs, seed=seed))
    return model, data, res.metrics[-1].val_acc


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--widths", default="15,16,31,32")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--epochs", type=int, default=30)
    args = p.parse_args()
    for w in (int(v) for v in args.widths.split(",")):
        arch = ", ".join([f"dense:{w}, bn, act"] * args.depth + ["dense:2"])
        wins, agree = 0, []
        for seed in range(args.seeds):
            model, data, soft_acc = fit(arch, "Soft", seed, args.epochs)
            fm = freeze_model(model)
            frozen = run_frozen(fm, encode_input(fm, data.val.codes)).argmax(1)
            agree.append(np.mean(frozen == model.predict(data.val.tensor(), model.nu_final)))
            wins += soft_acc >= fit(arch, "HardSTE", seed, args.epochs)[2]
        print(f"width={w:3d} depth={args.depth}: Soft >= HardSTE in {wins}/{args.seeds}, "
              f"frozen agreement min {min(agree):.3f} mean {np.mean(agree):.3f}")


if __name__ == "__main__":
    main()
