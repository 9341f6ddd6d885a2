"""Epoch loop for self-binarizing (and hard-binarized baseline) training."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteLoss
from .adam import AdamState, adam_step
from .histogram import histogram_snapshot
from .schedule import NuSchedule, nu_at
from .weights import refresh_weights

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr0: float = 1e-3
    lr_decay: float = 0.95
    seed: int = 0
    augment: bool = False
    hist_bins: int = 100
    eval_batch: int = 1024


@dataclass
class EpochMetrics:
    epoch: int
    nu: float
    lr: float
    train_loss: float
    train_acc: float
    val_acc: float

    FIELDS = ("epoch", "nu", "lr", "train_loss", "train_acc", "val_acc")

    def row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


@dataclass
class TrainResult:
    model: object
    metrics: list[EpochMetrics]
    histograms: list[tuple] = field(default_factory=list)  # (layer, epoch, bin_center, pre, post)
    adam: dict = field(default_factory=dict)

    @property
    def final_val_acc(self) -> float:
        return self.metrics[-1].val_acc


def evaluate(model, split, nu: float, batch: int = 1024, **kw) -> float:
    if split is None or len(split) == 0:
        return float("nan")
    x, y = split.tensor(), split.labels
    hits = 0
    for i in range(0, len(y), batch):
        hits += int(np.sum(model.predict(x[i : i + batch], nu, **kw) == y[i : i + batch]))
    return hits / len(y)


def train(model, data, schedule: NuSchedule, config: TrainConfig, on_epoch=None) -> TrainResult:
    """Train ``model`` in place on ``data.train``; returns the per-epoch log.

    Each epoch sets nu_e from the schedule, refreshes soft weights, runs one
    pass of Adam over shuffled minibatches, then logs loss/accuracy and a
    weight-histogram snapshot per binarized layer.
    """
    if len(data.train) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    params = model.params()
    adam = {p.name: AdamState.like(p.value, lr0=config.lr0, decay=config.lr_decay) for p in params}
    metrics, hists = [], []
    for epoch in range(config.epochs):
        nu = nu_at(schedule, min(epoch, schedule.total_epochs))
        for layer in model.weighted:
            if layer.weights.soft:
                refresh_weights(layer.weights, nu)
        losses, hits, seen = [], 0, 0
        for b, (x, y) in enumerate(data.train.batches(config.batch_size, rng, augment=config.augment)):
            loss, logits = model.loss_and_backward(x, y, nu)
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, b, loss)
            for p in params:
                adam_step(adam[p.name], p.value, p.grad, epoch)
                if p.clip:
                    np.clip(p.value, -1.0, 1.0, out=p.value)
            losses.append(loss * len(y))
            hits += int(np.sum(np.argmax(logits, axis=1) == y))
            seen += len(y)
        model.nu_final = nu
        m = EpochMetrics(
            epoch=epoch,
            nu=nu,
            lr=adam[params[0].name].lr(epoch),
            train_loss=float(np.sum(losses) / seen),
            train_acc=hits / seen,
            val_acc=evaluate(model, data.val, nu, config.eval_batch),
        )
        metrics.append(m)
        for layer in model.weighted:
            if not layer.weights.binarize:
                continue
            centers, pre, post = histogram_snapshot(layer.weights, config.hist_bins, nu)
            hists.extend((layer.name, epoch, c, a, b) for c, a, b in zip(centers, pre, post))
        log.info("epoch %d nu=%.4g loss=%.4f acc=%.4f val=%.4f", epoch, nu, m.train_loss, m.train_acc, m.val_acc)
        if on_epoch is not None:
            on_epoch(m, model)
    return TrainResult(model, metrics, hists, adam)
