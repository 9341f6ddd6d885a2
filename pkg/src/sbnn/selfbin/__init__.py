"""Self-binarizing training: constrained weights, nu schedule, Adam, alpha gradients, histograms."""

from .adam import AdamState, adam_step
from .histogram import histogram_snapshot, mass_near_binary
from .schedule import NuSchedule, nu_at
from .trainer import EpochMetrics, TrainConfig, TrainResult, evaluate, train
from .weights import (
    AlphaScale,
    ConstrainedWeights,
    Mode,
    alpha_chain_backward,
    alpha_optimal,
    grad_P_from_grad_W,
    refresh_weights,
    sign,
)

__all__ = [
    "AdamState", "adam_step", "histogram_snapshot", "mass_near_binary", "NuSchedule", "nu_at", "EpochMetrics",
    "TrainConfig", "TrainResult", "evaluate", "train", "AlphaScale", "ConstrainedWeights", "Mode",
    "alpha_chain_backward", "alpha_optimal", "grad_P_from_grad_W", "refresh_weights", "sign",
]
