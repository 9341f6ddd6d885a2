"""Dense tensor arithmetic for the training path.

Tensors are plain numpy arrays in row-major NCHW layout (kernels are
``Cout, Cin, Kh, Kw``). Training math runs in float32; every function here
preserves the dtype of its floating inputs so gradient checks can run in
float64. Convolution is cross-correlation (no kernel flip).
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch

DTYPE = np.float32

Tensor = np.ndarray


def as_tensor(x, dtype=DTYPE) -> Tensor:
    t = np.asarray(x, dtype=dtype)
    if t.ndim > 4:
        raise ShapeMismatch(f"tensors are rank <= 4, got rank {t.ndim}")
    return t


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if stride <= 0 or pad < 0:
        raise ShapeMismatch(f"invalid stride={stride} / pad={pad}")
    if span < 0 or span % stride:
        raise ShapeMismatch(
            f"kernel {k} with stride {stride}, pad {pad} does not tile extent {size}"
        )
    return span // stride + 1


def _check_conv(x: Tensor, kernel: Tensor, stride: int, pad: int) -> tuple[int, int]:
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeMismatch(f"conv2d wants rank-4 input and kernel, got {x.shape} and {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    ho = conv_output_size(x.shape[2], kernel.shape[2], stride, pad)
    wo = conv_output_size(x.shape[3], kernel.shape[3], stride, pad)
    return ho, wo


def pad2d(x: np.ndarray, pad: int, value=0) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=value)


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int, pad_value=0) -> np.ndarray:
    """Strided view of every receptive field, shape ``(N, C, H', W', kh, kw)``.

    Works for any dtype (the binary runtime reuses it on bit planes).
    """
    xp = pad2d(x, pad, pad_value)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0, pad_value: float = 0.0) -> Tensor:
    """2D cross-correlation.

    ``pad_value`` fills the border; binary layers pad with -1 so the float
    graph matches the bit-packed runtime, which has no zero.
    """
    _check_conv(x, kernel, stride, pad)
    cols = im2col(x, kernel.shape[2], kernel.shape[3], stride, pad, pad_value)
    out = np.tensordot(cols, kernel, axes=([1, 4, 5], [1, 2, 3]))  # N, H', W', Cout
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)).astype(x.dtype, copy=False)


def conv2d_backward(
    x: Tensor, kernel: Tensor, upstream: Tensor, stride: int = 1, pad: int = 0, pad_value: float = 0.0
) -> tuple[Tensor, Tensor]:
    """Gradients of ``conv2d`` w.r.t. input and kernel."""
    ho, wo = _check_conv(x, kernel, stride, pad)
    if upstream.shape != (x.shape[0], kernel.shape[0], ho, wo):
        raise ShapeMismatch(f"upstream shape {upstream.shape} does not match conv output")
    kh, kw = kernel.shape[2:]
    cols = im2col(x, kh, kw, stride, pad, pad_value)
    grad_k = np.tensordot(upstream, cols, axes=([0, 2, 3], [0, 2, 3]))  # Cout, Cin, kh, kw

    n, c, h, w = x.shape
    grad_xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(upstream, kernel[:, :, i, j], axes=([1], [0]))  # N, H', W', Cin
            grad_xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += contrib.transpose(0, 3, 1, 2)
    grad_x = grad_xp[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(grad_x), grad_k.astype(kernel.dtype, copy=False)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def elementwise(fn: Callable, t: Tensor) -> Tensor:
    return np.asarray(fn(t), dtype=t.dtype)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    return a + b


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"sub: {a.shape} vs {b.shape}")
    return a - b


def scale(t: Tensor, factor: float) -> Tensor:
    return (t * factor).astype(t.dtype, copy=False)


def reduce_mean(t: Tensor, axes=None) -> Tensor:
    return np.mean(t, axis=axes, dtype=np.float64).astype(t.dtype)


def reduce_var(t: Tensor, axes=None) -> Tensor:
    """Population variance over ``axes``."""
    return np.var(t, axis=axes, dtype=np.float64).astype(t.dtype)


def maxpool2x2(x: Tensor) -> tuple[Tensor, np.ndarray]:
    """2x2 / stride-2 max pooling.

    Returns the pooled map and the flat window index (0..3, row-major) of the
    winner; ties go to the first element. Odd trailing rows/cols are dropped.
    """
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeMismatch(f"maxpool needs spatial extent >= 2, got {h}x{w}")
    ho, wo = h // 2, w // 2
    win = x[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, ho, wo, 4)
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward(input_shape: tuple, idx: np.ndarray, upstream: Tensor) -> Tensor:
    n, c, h, w = input_shape
    ho, wo = idx.shape[2:]
    onehot = (idx[..., None] == np.arange(4)).astype(upstream.dtype) * upstream[..., None]
    blocks = onehot.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    grad = np.zeros(input_shape, dtype=upstream.dtype)
    grad[:, :, : 2 * ho, : 2 * wo] = blocks
    return grad
