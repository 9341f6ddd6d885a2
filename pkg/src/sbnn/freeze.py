"""Freezing a trained graph into a fully binary, integer-only model.

Weights become ``sign(P)`` bit patterns. Each BatchNorm that feeds a sign
activation folds into one comparison per channel,

    sign(BN(I)) == XNOR(I > T, gamma > 0),   T = mu_r - sigma_r * beta / gamma,

with ``gamma == 0`` channels compiled to the constant ``beta > 0``. A
per-channel weight scale alpha folds in as ``T / alpha``. Thresholds are then
stored as 8-bit integers with one power-of-two exponent per layer.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .binrt import BitTensor, pack_rows, unpack_rows
from .errors import ChecksumError, FormatError, NonPositiveAlpha, UnfoldableLayer
from .graph import INPUT_SCALE, Activation, BatchNorm, BatchNormState, Conv, Dense, MaxPool, ModelGraph
from .selfbin.weights import AlphaScale, Mode, alpha_optimal

MAGIC = b"SBNN"
VERSION = 1
TAGS = {"conv": 1, "dense": 2, "maxpool": 3, "bnact": 4}
KINDS = {v: k for k, v in TAGS.items()}
INPUT_MODES = {"median": 0, "int8": 1}


@dataclass
class BinaryBNThresholds:
    T: np.ndarray
    gamma_sign: np.ndarray
    gamma_zero_mask: np.ndarray
    beta_pos: np.ndarray


@dataclass
class QuantizedThresholds:
    t_q: np.ndarray  # int8 per channel
    scale_exp: int
    gamma_sign: np.ndarray
    gamma_zero_mask: np.ndarray
    beta_pos: np.ndarray

    def integer_thresholds(self) -> np.ndarray:
        return self.t_q.astype(np.int64) << self.scale_exp

    def __eq__(self, other):
        return isinstance(other, QuantizedThresholds) and self.scale_exp == other.scale_exp and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("t_q", "gamma_sign", "gamma_zero_mask", "beta_pos")
        )


@dataclass
class FrozenLayer:
    kind: str  # conv | dense | maxpool | bnact
    weights: BitTensor | None = None
    stride: int = 1
    pad: int = 0
    thresholds: QuantizedThresholds | None = None

    @property
    def shape(self) -> tuple:
        if self.weights is not None:
            s = self.weights.shape
            return tuple(s) + (1,) * (4 - len(s))
        if self.kind == "maxpool":
            return (2, 2, 2, 0)
        return (self.thresholds.t_q.size, 0, 0, 0)

    def __eq__(self, other):
        return (
            isinstance(other, FrozenLayer)
            and (self.kind, self.stride, self.pad) == (other.kind, other.stride, other.pad)
            and self.weights == other.weights
            and self.thresholds == other.thresholds
        )


@dataclass
class FrozenModel:
    input_shape: tuple
    input_mode: str
    layers: list[FrozenLayer]
    input_medians: np.ndarray | None = None

    @property
    def n_classes(self) -> int:
        return self.layers[-1].weights.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FrozenModel):
            return False
        med_eq = (self.input_medians is None and other.input_medians is None) or (
            self.input_medians is not None
            and other.input_medians is not None
            and np.array_equal(self.input_medians, other.input_medians)
        )
        return (
            tuple(self.input_shape) == tuple(other.input_shape)
            and self.input_mode == other.input_mode
            and med_eq
            and self.layers == other.layers
        )


# ---------------------------------------------------------------------------
# primitives


def freeze_weights(P: np.ndarray) -> BitTensor:
    """Bit 1 where P > 0; zero and negatives become bit 0 (-1)."""
    return BitTensor.pack(np.asarray(P) > 0)


def fold_bn(state: BatchNormState) -> BinaryBNThresholds:
    mu = state.mu_r.astype(np.float64)
    sigma = state.sigma_r.astype(np.float64)
    beta = state.beta.astype(np.float64)
    gamma = state.gamma.astype(np.float64)
    zero = gamma == 0
    safe = np.where(zero, 1.0, gamma)
    T = np.where(zero, 0.0, mu - sigma * beta / safe)
    return BinaryBNThresholds(T, gamma > 0, zero, beta > 0)


def apply_alpha(th: BinaryBNThresholds, alpha: AlphaScale | np.ndarray) -> BinaryBNThresholds:
    """``T / alpha`` per channel; alpha > 0 keeps the comparison direction."""
    a = np.asarray(alpha.alpha if isinstance(alpha, AlphaScale) else alpha, dtype=np.float64)
    if np.any(~(a > 0)):
        raise NonPositiveAlpha(f"alpha must be positive, got min {a.min()}")
    a = np.broadcast_to(a, th.T.shape)
    return BinaryBNThresholds(th.T / a, th.gamma_sign.copy(), th.gamma_zero_mask.copy(), th.beta_pos.copy())


def quantize_thresholds(th: BinaryBNThresholds, layer_fan_in: int) -> QuantizedThresholds:
    """8-bit thresholds sharing one power-of-two exponent per layer.

    Pre-activations are integers in [-k, k]. For gamma > 0 the sign is
    ``I > T``, i.e. ``I > floor(T)``. For gamma < 0 it is ``I < T``, i.e.
    ``NOT(I > ceil(T) - 1)``; using ``floor(T)`` there would get ``I == T``
    wrong. That integer (from T clamped to +-(k+1)) is what gets quantized.
    With ``scale_exp == 0`` the comparison is exact; otherwise the stored value
    is ``round(t_int / 2**s)`` and only pre-activations within ``2**(s-1)``
    of the threshold can flip.
    """
    k = int(layer_fan_in)
    T = np.where(th.gamma_zero_mask, 0.0, th.T)
    T = np.clip(np.nan_to_num(T, nan=0.0, posinf=k + 1, neginf=-(k + 1)), -(k + 1), k + 1)
    t_int = np.where(th.gamma_sign, np.floor(T), np.ceil(T) - 1).astype(np.int64)
    live = ~th.gamma_zero_mask
    s = 0
    while True:
        t_q = np.floor(t_int / 2.0**s + 0.5).astype(np.int64)
        if not live.any() or (t_q[live].min() >= -128 and t_q[live].max() <= 127):
            break
        s += 1
    t_q = np.where(live, np.clip(t_q, -128, 127), 0).astype(np.int8)
    return QuantizedThresholds(t_q, s, th.gamma_sign.copy(), th.gamma_zero_mask.copy(), th.beta_pos.copy())


# ---------------------------------------------------------------------------
# whole-model freezing


def layer_alpha(layer, nu: float) -> AlphaScale:
    return alpha_optimal(layer.weights.effective(nu), nu, per_channel=layer.weights.alpha_per_channel)


def freeze_model(model: ModelGraph, use_alpha: bool = False) -> FrozenModel:
    """Compile a trained graph into a FrozenModel.

    Layers trained with alpha always fold it; ``use_alpha`` additionally folds
    the least-squares alpha of soft/STE layers.
    """
    layers = model.layers
    nu = model.nu_final
    out: list[FrozenLayer] = []
    first = True
    i = 0
    while i < len(layers):
        layer = layers[i]
        if not isinstance(layer, (Conv, Dense)):
            raise UnfoldableLayer(f"unexpected {layer.kind} at position {i}")
        if not layer.weights.binarize:
            raise UnfoldableLayer(f"{layer.name} opted out of binarization; it cannot be frozen")
        bits = freeze_weights(layer.weights.P)
        if isinstance(layer, Conv):
            out.append(FrozenLayer("conv", bits, layer.stride, layer.pad))
        else:
            out.append(FrozenLayer("dense", bits))
        in_scale = INPUT_SCALE if (first and model.input_mode == "int8") else 1
        fan_in = layer.fan_in * in_scale
        first = False
        i += 1
        if isinstance(layer, Dense) and layer.classifier:
            if i != len(layers):
                raise UnfoldableLayer("classifier must be the last layer")
            break
        while i < len(layers) and isinstance(layers[i], MaxPool):
            out.append(FrozenLayer("maxpool"))
            i += 1
        if not (i < len(layers) and isinstance(layers[i], BatchNorm)):
            raise UnfoldableLayer(f"{layer.name} is not followed by batch norm")
        if not (i + 1 < len(layers) and isinstance(layers[i + 1], Activation)):
            raise UnfoldableLayer(f"{layers[i].name} does not feed a sign activation")
        th = fold_bn(layers[i].state)
        if use_alpha or layer.weights.mode is Mode.HARD_STE_ALPHA:
            th = apply_alpha(th, layer_alpha(layer, nu))
        if in_scale != 1:
            th = BinaryBNThresholds(th.T * in_scale, th.gamma_sign, th.gamma_zero_mask, th.beta_pos)
        out.append(FrozenLayer("bnact", thresholds=quantize_thresholds(th, fan_in)))
        i += 2
    medians = None if model.input_mode == "int8" else np.asarray(model.input_medians, np.uint8)
    return FrozenModel(tuple(model.input_shape), model.input_mode, out, medians)


# ---------------------------------------------------------------------------
# file format (little-endian)
#
#   "SBNN" u16 version u16 layer_count
#   u8 input_mode  u8 input_rank  u32[4] input_shape  [u8 median per channel, median mode only]
#   per layer: u8 tag, u32[4] shape, then
#     conv:   u16 stride, u16 pad, weight bits (ceil(Cin*Kh*Kw/8) bytes per output channel)
#     dense:  weight bits (ceil(Cin/8) bytes per output channel)
#     maxpool: nothing
#     bnact:  i8 t_q[C], u8 scale_exp, gamma_sign / gamma_zero_mask / beta_pos bitfields (ceil(C/8) bytes each)
#   u32 CRC32 of everything before it


def _bits_to_bytes(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(bool), bitorder="little").tobytes()


def _weights_bytes(bt: BitTensor) -> bytes:
    nb = -(-bt.row_bits // 8)
    return np.ascontiguousarray(bt.words).view(np.uint8)[:, :nb].tobytes()


def to_bytes(fm: FrozenModel) -> bytes:
    buf = bytearray(MAGIC)
    buf += struct.pack("<HH", VERSION, len(fm.layers))
    shape = tuple(fm.input_shape)
    buf += struct.pack("<BB4I", INPUT_MODES[fm.input_mode], len(shape), *(shape + (0,) * (4 - len(shape))))
    if fm.input_mode == "median":
        buf += np.asarray(fm.input_medians, np.uint8).tobytes()
    for layer in fm.layers:
        buf += struct.pack("<B4I", TAGS[layer.kind], *layer.shape)
        if layer.kind == "conv":
            buf += struct.pack("<HH", layer.stride, layer.pad)
        if layer.weights is not None:
            buf += _weights_bytes(layer.weights)
        if layer.kind == "bnact":
            th = layer.thresholds
            buf += th.t_q.astype(np.int8).tobytes()
            buf += struct.pack("<B", th.scale_exp)
            for f in (th.gamma_sign, th.gamma_zero_mask, th.beta_pos):
                buf += _bits_to_bytes(f)
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    return bytes(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file: wanted {n} bytes", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes) -> FrozenModel:
    if len(data) < 12:
        raise FormatError("file too short", len(data))
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError(f"CRC32 mismatch: stored {crc:#010x}, computed {zlib.crc32(body):#010x}")
    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise FormatError("bad magic", 0)
    version, count = r.unpack("<HH")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    mode_code, rank, *dims = r.unpack("<BB4I")
    modes = {v: k for k, v in INPUT_MODES.items()}
    if mode_code not in modes or not 1 <= rank <= 4:
        raise FormatError("bad input header", 8)
    input_shape = tuple(dims[:rank])
    medians = None
    if modes[mode_code] == "median":
        medians = np.frombuffer(r.take(input_shape[0]), np.uint8).copy()
    layers = []
    for _ in range(count):
        at = r.pos
        tag, *shape = r.unpack("<B4I")
        kind = KINDS.get(tag)
        if kind is None:
            raise FormatError(f"unknown layer tag {tag}", at)
        if kind in ("conv", "dense"):
            stride, pad = r.unpack("<HH") if kind == "conv" else (1, 0)
            wshape = tuple(shape) if kind == "conv" else tuple(shape[:2])
            rows, n = wshape[0], int(np.prod(wshape[1:]))
            nb = -(-n // 8)
            raw = np.frombuffer(r.take(rows * nb), np.uint8).reshape(rows, nb)
            bits = unpack_rows(raw, n) if rows else np.zeros((0, n), bool)
            layers.append(FrozenLayer(kind, BitTensor(wshape, pack_rows(bits)), stride, pad))
        elif kind == "maxpool":
            layers.append(FrozenLayer(kind))
        else:
            c = shape[0]
            t_q = np.frombuffer(r.take(c), np.int8).copy()
            (s,) = r.unpack("<B")
            nb = -(-c // 8)
            fields = [
                np.unpackbits(np.frombuffer(r.take(nb), np.uint8), count=c, bitorder="little").astype(bool)
                for _ in range(3)
            ]
            layers.append(FrozenLayer(kind, thresholds=QuantizedThresholds(t_q, s, *fields)))
    if r.pos != len(body):
        raise FormatError("trailing bytes after last layer", r.pos)
    return FrozenModel(input_shape, modes[mode_code], layers, medians)


def save_frozen(fm: FrozenModel, path) -> None:
    from .io import atomic_write_bytes

    atomic_write_bytes(path, to_bytes(fm))


def load_frozen(path) -> FrozenModel:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
