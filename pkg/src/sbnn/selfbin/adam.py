from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr0: float = 1e-3
    decay: float = 0.95
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, param: np.ndarray, **kw) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), **kw)

    def lr(self, epoch: int) -> float:
        return self.lr0 * self.decay**epoch


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray, epoch: int) -> None:
    """In-place Adam update of ``param`` with learning rate ``lr0 * decay**epoch``."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ShapeMismatch(f"adam: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * (grad * grad)
    m_hat = state.m / (1.0 - b1**state.step)
    v_hat = state.v / (1.0 - b2**state.step)
    param -= (state.lr(epoch) * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype, copy=False)
