"""Integer-only binary inference: bit-packed tensors, XNOR+popcount kernels, BinaryBN.

Bit convention: 1 encodes +1 and 0 encodes -1. A ``BitTensor`` packs each
row (index along the leading axis) row-major into little-endian 64-bit words
with zeroed tail bits, so flattening ``[N, C, H, W]`` to ``[N, C*H*W]`` is free.

Nothing on the ``run_frozen`` path touches a floating-point value; ``sbn_infer``
is the shift-based reference used only by the benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ChannelMismatch, FormatError, LengthMismatch, ShapeMismatch

WORD_BITS = 64
_CHUNK_WORDS = 1 << 22  # cap on the XOR scratch buffer, in words


def n_words(n_bits: int) -> int:
    return -(-n_bits // WORD_BITS)


def pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack a 2D boolean array into ``(rows, n_words)`` uint64 with zero tail."""
    rows, n = bits.shape
    packed = np.packbits(bits.astype(bool, copy=False), axis=1, bitorder="little")
    if n % WORD_BITS == 0:
        return packed.view("<u8")
    out = np.zeros((rows, n_words(n) * 8), dtype=np.uint8)
    out[:, : packed.shape[1]] = packed
    return out.view("<u8")


def unpack_rows(words: np.ndarray, n: int) -> np.ndarray:
    raw = np.ascontiguousarray(words).view(np.uint8)
    return np.unpackbits(raw, axis=1, count=n, bitorder="little").astype(bool)


@dataclass
class BitTensor:
    shape: tuple
    words: np.ndarray  # uint64, (shape[0], n_words(prod(shape[1:])))

    @property
    def row_bits(self) -> int:
        return int(np.prod(self.shape[1:], dtype=np.int64))

    @classmethod
    def pack(cls, bits: np.ndarray) -> "BitTensor":
        """From a boolean (or 0/1) array whose leading axis indexes rows."""
        bits = np.asarray(bits)
        rows = bits.shape[0]
        return cls(tuple(bits.shape), pack_rows(bits.reshape(rows, -1)))

    @classmethod
    def from_signs(cls, x: np.ndarray) -> "BitTensor":
        """From a +-1 (or any signed) array; ``x > 0`` becomes bit 1."""
        return cls.pack(np.asarray(x) > 0)

    def unpack(self) -> np.ndarray:
        return unpack_rows(self.words, self.row_bits).reshape(self.shape)

    def to_pm1(self) -> np.ndarray:
        return np.where(self.unpack(), 1, -1).astype(np.int8)

    def reshape(self, *shape) -> "BitTensor":
        shape = tuple(shape[0]) if len(shape) == 1 and isinstance(shape[0], tuple) else shape
        if shape[0] != self.shape[0] or np.prod(shape[1:]) != self.row_bits:
            raise ShapeMismatch(f"cannot view {self.shape} as {shape} (rows must stay put)")
        return BitTensor(tuple(shape), self.words)

    def __eq__(self, other):
        return (
            isinstance(other, BitTensor) and self.shape == other.shape and np.array_equal(self.words, other.words)
        )


def popcount(words: np.ndarray) -> np.ndarray:
    return np.bitwise_count(words)


def xnor_dot(a: np.ndarray, b: np.ndarray, n_valid: int) -> int:
    """+-1 dot product of two packed vectors: ``n_valid - 2 * popcount(a ^ b)``."""
    a, b = np.asarray(a, np.uint64), np.asarray(b, np.uint64)
    if a.shape != b.shape:
        raise LengthMismatch(f"word spans differ: {a.shape} vs {b.shape}")
    if n_valid > a.size * WORD_BITS:
        raise LengthMismatch(f"{n_valid} valid bits do not fit in {a.size} words")
    if n_valid == 0:
        return 0
    return int(n_valid - 2 * int(popcount(a ^ b).sum()))


def _xnor_matmul(x_words: np.ndarray, w_words: np.ndarray, n_valid: int) -> np.ndarray:
    """All-pairs xnor_dot between packed rows: ``(P, nw) x (Cout, nw) -> (P, Cout)`` int32."""
    if x_words.shape[1] != w_words.shape[1]:
        raise LengthMismatch(f"word spans differ: {x_words.shape[1]} vs {w_words.shape[1]}")
    p, nw = x_words.shape
    cout = w_words.shape[0]
    out = np.empty((p, cout), dtype=np.int32)
    step = max(1, _CHUNK_WORDS // max(1, cout * nw))
    for i in range(0, p, step):
        x = x_words[i : i + step, None, :]
        mism = popcount(x ^ w_words[None, :, :]).sum(axis=2, dtype=np.int32)
        out[i : i + step] = n_valid - 2 * mism
    return out


def _check_conv_shapes(in_shape, w_shape, stride, pad):
    if len(in_shape) != 4 or len(w_shape) != 4:
        raise ShapeMismatch(f"binconv2d wants rank-4 input/weights, got {in_shape}, {w_shape}")
    if in_shape[1] != w_shape[1]:
        raise ShapeMismatch(f"input has {in_shape[1]} channels, weights expect {w_shape[1]}")
    ho = T.conv_output_size(in_shape[2], w_shape[2], stride, pad)
    wo = T.conv_output_size(in_shape[3], w_shape[3], stride, pad)
    return ho, wo


def binconv2d(inp: BitTensor, weights: BitTensor, stride: int = 1, pad: int = 0) -> np.ndarray:
    """XNOR+popcount convolution; padding contributes -1 (bit 0). Returns int32 NCHW."""
    ho, wo = _check_conv_shapes(inp.shape, weights.shape, stride, pad)
    n = inp.shape[0]
    cout, cin, kh, kw = weights.shape
    bits = inp.unpack().view(np.uint8)
    cols = T.im2col(bits, kh, kw, stride, pad, 0)  # N, C, H', W', kh, kw
    patches = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
    out = _xnor_matmul(pack_rows(patches), weights.words, cin * kh * kw)
    return np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))


def bindense(inp: BitTensor, weights: BitTensor) -> np.ndarray:
    """XNOR+popcount fully-connected layer; input rows are flattened samples."""
    k = weights.row_bits
    if inp.row_bits != k:
        raise ShapeMismatch(f"dense input has {inp.row_bits} bits per row, weights expect {k}")
    if k == 0:
        return np.zeros((inp.shape[0], weights.shape[0]), dtype=np.int32)
    return _xnor_matmul(inp.words, weights.words, k)


def intconv2d(inp: np.ndarray, weights: BitTensor, stride: int = 1, pad: int = 0) -> np.ndarray:
    """8-bit integer input times +-1 weights (first layer of the int8 input mode)."""
    ho, wo = _check_conv_shapes(inp.shape, weights.shape, stride, pad)
    w = weights.to_pm1().astype(np.int32)
    cols = T.im2col(inp.astype(np.int32), weights.shape[2], weights.shape[3], stride, pad, 0)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)).astype(np.int32)


def intdense(inp: np.ndarray, weights: BitTensor) -> np.ndarray:
    x = inp.reshape(inp.shape[0], -1).astype(np.int32)
    if x.shape[1] != weights.row_bits:
        raise ShapeMismatch(f"dense input has {x.shape[1]} values, weights expect {weights.row_bits}")
    return (x @ weights.to_pm1().astype(np.int32).T).astype(np.int32)


def int_maxpool(fmap: np.ndarray) -> np.ndarray:
    return T.maxpool2x2(fmap)[0]


def binary_bn_act(fmap: np.ndarray, th, bits: np.ndarray | None = None) -> BitTensor:
    """BinaryBN fused with the sign activation: ``XNOR(I > t_q << s, gamma > 0)`` per channel.

    The XNOR is resolved per channel up front: ``I > t`` where gamma > 0 and
    its negation ``I <= t`` where gamma < 0, so each element costs one integer
    comparison. Channels flagged ``gamma_zero_mask`` emit the constant
    ``beta_pos``. ``th`` is a ``QuantizedThresholds``; ``bits`` is an optional
    boolean scratch buffer shaped like ``fmap``.
    """
    c = fmap.shape[1]
    if th.t_q.size != c:
        raise ChannelMismatch(f"feature map has {c} channels, thresholds cover {th.t_q.size}")
    thr = th.integer_thresholds()
    if bits is None:
        bits = np.empty(fmap.shape, dtype=bool)
    for ch in range(c):
        src, dst = fmap[:, ch], bits[:, ch]
        if th.gamma_zero_mask[ch]:
            dst[...] = th.beta_pos[ch]
        elif th.gamma_sign[ch]:
            np.greater(src, int(thr[ch]), out=dst)
        else:
            np.less_equal(src, int(thr[ch]), out=dst)
    return BitTensor.pack(bits)


# ---------------------------------------------------------------------------
# shift-based batch norm (benchmark reference)


def round_pow2_exponent(x: np.ndarray) -> np.ndarray:
    """Exponent of the power of two nearest to |x| in the log domain; ties go up."""
    a = np.abs(np.asarray(x, dtype=np.float64))
    safe = np.where(a > 0, a, 1.0)
    return np.floor(np.log2(safe) + 0.5).astype(np.int64)


def round_pow2(x: np.ndarray) -> np.ndarray:
    """Signed nearest power of two (zero stays zero)."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x == 0, 0.0, np.sign(x) * np.ldexp(1.0, round_pow2_exponent(x)))


def sbn_infer(fmap: np.ndarray, state) -> np.ndarray:
    """Batch norm with sigma_r and gamma rounded to powers of two.

    The divide and multiply become exponent shifts (``ldexp``), so with
    power-of-two parameters the result equals ordinary batch norm bit for bit.
    """
    n = fmap.ndim
    shp = (1, -1) + (1,) * (n - 2)
    x = np.asarray(fmap, dtype=np.float64) if not np.issubdtype(np.asarray(fmap).dtype, np.floating) else fmap
    shift = (round_pow2_exponent(state.gamma) - round_pow2_exponent(state.sigma_r)).reshape(shp)
    centered = x - state.mu_r.reshape(shp)
    scaled = np.ldexp(centered, shift.astype(np.int32)) * np.sign(state.gamma).reshape(shp)
    return (scaled + state.beta.reshape(shp)).astype(x.dtype, copy=False)


# ---------------------------------------------------------------------------
# whole-model execution


def encode_input(model, codes: np.ndarray):
    """Turn u8 codes into the first layer's input: a BitTensor (median mode) or int8 values."""
    codes = np.asarray(codes)
    if tuple(codes.shape[1:]) != tuple(model.input_shape):
        raise FormatError(f"input shape {codes.shape[1:]} does not match model {model.input_shape}")
    if codes.dtype != np.uint8:
        raise FormatError(f"inputs must be u8 codes, got {codes.dtype}")
    if model.input_mode == "median":
        med = model.input_medians.reshape((1, -1) + (1,) * (codes.ndim - 2))
        return BitTensor.pack(codes > med)
    return codes.astype(np.int16) - 128


def run_frozen(model, x, trace: list | None = None) -> np.ndarray:
    """Run a FrozenModel on encoded inputs; returns int32 class scores ``(N, classes)``.

    ``trace`` (if a list) receives ``(op, dtype)`` for every intermediate value.
    """
    h = x
    if isinstance(h, BitTensor):
        expect = h.shape[1:]
    else:
        h = np.asarray(h)
        if np.issubdtype(h.dtype, np.floating):
            raise FormatError("frozen inference takes integer or packed inputs only")
        expect = h.shape[1:]
    if tuple(expect) != tuple(model.input_shape):
        raise FormatError(f"input shape {tuple(expect)} does not match model {tuple(model.input_shape)}")

    def note(op, v):
        if trace is not None:
            trace.append((op, v.words.dtype if isinstance(v, BitTensor) else v.dtype))

    note("input", h)
    for layer in model.layers:
        if layer.kind == "conv":
            if isinstance(h, BitTensor):
                h = binconv2d(h, layer.weights, layer.stride, layer.pad)
            else:
                h = intconv2d(h, layer.weights, layer.stride, layer.pad)
        elif layer.kind == "dense":
            if isinstance(h, BitTensor):
                h = bindense(h.reshape(h.shape[0], h.row_bits), layer.weights)
            else:
                h = intdense(h, layer.weights)
        elif layer.kind == "maxpool":
            h = int_maxpool(h)
        elif layer.kind == "bnact":
            h = binary_bn_act(h, layer.thresholds)
        else:
            raise FormatError(f"unknown layer kind {layer.kind!r}")
        note(layer.kind, h)
    if isinstance(h, BitTensor):
        raise FormatError("model does not end with a dense layer emitting scores")
    return h
