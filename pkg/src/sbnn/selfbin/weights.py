"""Constrained weights: learnable parameters P mapped to the weights a layer uses.

Soft mode trains on ``W = tanh(nu * P)``; the hard baselines use ``sign(P)``
(optionally scaled per channel by alpha) with a surrogate gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..errors import ShapeMismatch, StaleCache, WrongMode


class Mode(str, Enum):
    SOFT = "Soft"
    HARD_STE = "HardSTE"
    HARD_STE_ALPHA = "HardSTEWithAlpha"

    @property
    def hard(self) -> bool:
        return self is not Mode.SOFT


def sign(x: np.ndarray) -> np.ndarray:
    """+1 where x > 0, else -1 (zero maps to -1)."""
    x = np.asarray(x)
    return np.where(x > 0, 1, -1).astype(x.dtype if np.issubdtype(x.dtype, np.floating) else np.int8)


@dataclass
class AlphaScale:
    alpha: np.ndarray  # one positive scale per row (output channel, or a single row)
    degenerate: np.ndarray = None  # rows whose tanh image was all zeros; alpha forced to 1

    def __post_init__(self):
        if self.degenerate is None:
            self.degenerate = np.zeros(self.alpha.shape, dtype=bool)

    def broadcast_to(self, shape) -> np.ndarray:
        return self.alpha.reshape((-1,) + (1,) * (len(shape) - 1))


@dataclass
class ConstrainedWeights:
    """Learnable parameters ``P`` and the weight cache derived from them.

    ``binarize=False`` opts a layer out of binarization; its weights are ``P``.
    ``alpha_per_channel=False`` shares one alpha across the whole tensor
    (used by the classifier so the argmax survives dropping alpha).
    """

    P: np.ndarray
    mode: Mode = Mode.SOFT
    binarize: bool = True
    alpha_per_channel: bool = True
    W: np.ndarray | None = field(default=None, repr=False)
    nu: float | None = None
    alpha: AlphaScale | None = field(default=None, repr=False)

    def __post_init__(self):
        self.mode = Mode(self.mode)

    @property
    def soft(self) -> bool:
        return self.binarize and self.mode is Mode.SOFT

    def rows(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(x.shape[0], -1) if self.alpha_per_channel else x.reshape(1, -1)

    def effective(self, nu: float | None = None) -> np.ndarray:
        """Real-valued weights the binary pattern approximates (W in soft mode, latent P otherwise)."""
        if self.soft:
            return np.tanh(nu * self.P) if nu is not None else self.W
        return self.P

    def forward(self, nu: float, binary: bool = False, use_alpha: bool = False) -> np.ndarray:
        """Weights for one forward pass.

        ``binary=True`` gives the frozen view ``sign(P)``, scaled by alpha when
        the mode trains with alpha or ``use_alpha`` is set.
        """
        if not self.binarize:
            return self.P
        if self.mode is Mode.SOFT and not binary:
            refresh_weights(self, nu)
            return self.W
        B = sign(self.P)
        if self.mode is Mode.HARD_STE_ALPHA or (binary and use_alpha):
            self.alpha = alpha_optimal(self.effective(nu), nu, per_channel=self.alpha_per_channel)
            self.nu = nu
            return (self.alpha.broadcast_to(B.shape) * B).astype(self.P.dtype)
        return B

    def backward(self, grad_w: np.ndarray, nu: float) -> np.ndarray:
        if not self.binarize:
            return grad_w
        if self.mode is Mode.SOFT:
            return grad_P_from_grad_W(self, grad_w, nu)
        if self.mode is Mode.HARD_STE:
            return ste_weight_grad(self.P, grad_w)
        if self.alpha is None or self.nu != nu:
            raise StaleCache("alpha not computed for this nu; run forward first")
        return alpha_chain_backward(grad_w, self.P, self.alpha, nu)


def refresh_weights(cw: ConstrainedWeights, nu: float) -> None:
    if not cw.soft:
        raise WrongMode(f"refresh_weights needs Soft mode, layer is {cw.mode.value}")
    cw.W = np.tanh(nu * cw.P).astype(cw.P.dtype, copy=False)
    cw.nu = nu


def grad_P_from_grad_W(cw: ConstrainedWeights, grad_w: np.ndarray, nu: float) -> np.ndarray:
    """Chain rule through ``W = tanh(nu P)``: ``dP = dW * nu * (1 - W^2)``."""
    if not cw.soft:
        raise WrongMode(f"grad_P_from_grad_W needs Soft mode, layer is {cw.mode.value}")
    if cw.W is None or cw.nu != nu:
        raise StaleCache("weight cache was not refreshed for this nu")
    return (grad_w * nu * (1.0 - cw.W * cw.W)).astype(cw.P.dtype, copy=False)


def ste_weight_grad(P: np.ndarray, grad_w: np.ndarray) -> np.ndarray:
    return np.where(np.abs(P) <= 1, grad_w, 0).astype(grad_w.dtype, copy=False)


def alpha_optimal(W: np.ndarray, nu: float, per_channel: bool = True) -> AlphaScale:
    """Least-squares scale of W onto tanh(nu W), one value per output channel.

    alpha = <W, tanh(nu W)> / <tanh(nu W), tanh(nu W)>. Rows where tanh(nu W)
    vanishes get alpha = 1 and are flagged as degenerate.
    """
    rows = W.reshape(W.shape[0], -1) if per_channel else W.reshape(1, -1)
    if rows.shape[1] == 0:
        raise ShapeMismatch("alpha_optimal needs non-empty channels")
    F = np.tanh(nu * rows.astype(np.float64))
    num = np.sum(rows * F, axis=1)
    den = np.sum(F * F, axis=1)
    degenerate = den == 0
    alpha = np.where(degenerate, 1.0, num / np.where(degenerate, 1.0, den))
    return AlphaScale(alpha.astype(W.dtype), degenerate)


def alpha_chain_backward(grad_b: np.ndarray, W: np.ndarray, alpha: AlphaScale, nu: float) -> np.ndarray:
    """Gradient w.r.t. W of ``B = alpha(W) * tanh(nu W)`` given dC/dB.

    Per row: dC/dW_i = dalpha/dW_i * sum_j(dC/dB_j F_j) + alpha dC/dB_i F'_i.
    """
    n_rows = alpha.alpha.size
    w = W.reshape(n_rows, -1)
    g = grad_b.reshape(n_rows, -1)
    F = np.tanh(nu * w)
    dF = nu * (1.0 - F * F)
    a = alpha.alpha.reshape(-1, 1)
    den = np.sum(F * F, axis=1, keepdims=True)
    den = np.where(den == 0, 1.0, den)
    dalpha = (F + w * dF - 2.0 * a * F * dF) / den
    dalpha = np.where(alpha.degenerate.reshape(-1, 1), 0.0, dalpha)
    out = dalpha * np.sum(g * F, axis=1, keepdims=True) + a * g * dF
    return out.reshape(W.shape).astype(W.dtype, copy=False)
