from __future__ import annotations

import numpy as np

from .weights import ConstrainedWeights, sign

HIST_RANGE = (-1.5, 1.5)


def histogram_snapshot(cw: ConstrainedWeights, bins: int = 100, nu: float | None = None):
    """Density histograms of the weights before and after binarization.

    "Before" is ``tanh(nu P)`` for soft layers (the cached W when ``nu`` is
    omitted) and the latent ``P`` for hard ones; "after" is ``sign(P)``.

    Returns
    -------
    centers, pre_density, post_density : np.ndarray
    """
    pre = cw.effective(nu) if cw.soft else cw.P
    if pre is None:
        raise ValueError("soft layer has no weight cache; pass nu")
    edges = np.linspace(*HIST_RANGE, bins + 1)
    pre_d, _ = np.histogram(np.asarray(pre, dtype=np.float64).ravel(), bins=edges, density=True)
    post_d, _ = np.histogram(sign(np.asarray(cw.P, dtype=np.float64)).ravel(), bins=edges, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, pre_d, post_d


def mass_near_binary(cw: ConstrainedWeights, nu: float | None = None, lo: float = 0.95) -> float:
    """Fraction of pre-binarization weights with ``lo <= |w| <= 1``."""
    w = np.abs(cw.effective(nu) if cw.soft else cw.P)
    return float(np.mean((w >= lo) & (w <= 1.0)))
