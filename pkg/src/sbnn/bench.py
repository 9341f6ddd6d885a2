"""Cost model and microbenchmarks for BN, shift-based BN (SBN) and BinaryBN.

Each variant consumes the integer output of a binary convolution and
produces the sign bits for the next layer. BN and SBN also materialise their
full-width normalized output before taking the sign.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .binrt import binary_bn_act, round_pow2_exponent
from .freeze import fold_bn, quantize_thresholds
from .graph import BatchNormState

VARIANTS = ("BN", "SBN", "BinaryBN")
SBN_FRAC_BITS = 8

# BN channel widths of the reference architectures, drawn as reference lines in plots
REFERENCE_WIDTHS = {
    "VGG-16": [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512, 512],
    "AlexNet": [96, 256, 384, 384, 256, 4096, 4096],
}


@dataclass(frozen=True)
class CostModel:
    variant: str
    c: int
    h: int = 1
    w: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if min(self.c, self.h, self.w) <= 0:
            raise ValueError("dimensions must be positive")


def storage_bits(model: CostModel) -> int:
    """Parameter storage: BN four 32-bit vectors, SBN two 32-bit + two 8-bit, BinaryBN 8-bit T + 1 sign bit."""
    return {"BN": 128, "SBN": 80, "BinaryBN": 9}[model.variant] * model.c


def op_count(model: CostModel) -> int:
    chw = model.c * model.h * model.w
    return 2 * chw if model.variant == "BinaryBN" else 4 * chw + chw


def output_bits(model: CostModel) -> int:
    chw = model.c * model.h * model.w
    return chw if model.variant == "BinaryBN" else 32 * chw + chw


@dataclass
class BenchResult:
    variant: str
    batch_size: int
    c: int
    h: int
    w: int
    median_ns: float
    iqr_ns: float
    output_bytes: int
    storage_bits: int
    trials: int

    CSV_FIELDS = ("variant", "batch", "c", "h", "w", "median_ns", "iqr_ns", "output_bytes", "storage_bits")

    def row(self) -> list:
        return [self.variant, self.batch_size, self.c, self.h, self.w, self.median_ns, self.iqr_ns,
                self.output_bytes, self.storage_bits]


def random_bn_state(c: int, fan_in: int, rng: np.random.Generator) -> BatchNormState:
    """Random running statistics and affine parameters, as in the timing protocol."""
    return BatchNormState(
        mu_r=rng.uniform(-fan_in / 4, fan_in / 4, c).astype(np.float32),
        var_r=rng.uniform(1.0, fan_in, c).astype(np.float32),
        gamma=(rng.choice([-1.0, 1.0], c) * rng.uniform(0.1, 2.0, c)).astype(np.float32),
        beta=rng.uniform(-1.0, 1.0, c).astype(np.float32),
    )


def make_kernels(state: BatchNormState, fan_in: int, shape: tuple):
    """Build the three kernels for an NCHW ``shape``; each returns its output arrays.

    Scratch buffers are allocated and touched once here, so timing excludes
    page faults. BN takes a float32 map, SBN and BinaryBN take int32 maps.
    """
    shp = (1, -1, 1, 1)
    mu = state.mu_r.reshape(shp)
    sigma = state.sigma_r.astype(np.float32).reshape(shp)
    gamma = state.gamma.reshape(shp)
    beta = state.beta.reshape(shp)
    f_buf = np.zeros(shape, np.float32)
    i_buf = np.zeros(shape, np.int32)
    b_buf = np.zeros(shape, bool)

    def bn(fmap_f32):
        np.subtract(fmap_f32, mu, out=f_buf)
        np.divide(f_buf, sigma, out=f_buf)
        np.multiply(f_buf, gamma, out=f_buf)
        np.add(f_buf, beta, out=f_buf)
        np.greater(f_buf, 0, out=b_buf)
        return f_buf, np.packbits(b_buf, axis=-1, bitorder="little")

    F = SBN_FRAC_BITS
    mu_fx = np.round(state.mu_r * (1 << F)).astype(np.int32).reshape(shp)
    beta_fx = np.round(state.beta * (1 << F)).astype(np.int32).reshape(shp)
    shift = (round_pow2_exponent(state.gamma) - round_pow2_exponent(state.sigma_r)).reshape(-1)
    neg = (state.gamma < 0).reshape(-1)

    def sbn(fmap_i32):
        np.left_shift(fmap_i32, F, out=i_buf)
        np.subtract(i_buf, mu_fx, out=i_buf)
        for ch in range(i_buf.shape[1]):
            s = int(shift[ch])
            view = i_buf[:, ch]
            if s >= 0:
                view <<= s
            else:
                view >>= -s
            if neg[ch]:
                np.negative(view, out=view)
        np.add(i_buf, beta_fx, out=i_buf)
        np.greater(i_buf, 0, out=b_buf)
        return i_buf, np.packbits(b_buf, axis=-1, bitorder="little")

    th = quantize_thresholds(fold_bn(state), fan_in)

    def binary(fmap_i32):
        return (binary_bn_act(fmap_i32, th, b_buf).words,)

    return {"BN": bn, "SBN": sbn, "BinaryBN": binary}


def _time(fn, arg, trials: int, warmup: int):
    for _ in range(warmup):
        fn(arg)
    samples = []
    out = None
    for _ in range(trials):
        t0 = time.perf_counter_ns()
        out = fn(arg)
        samples.append(time.perf_counter_ns() - t0)
    return np.asarray(samples, dtype=np.float64), out


def run_bench(
    variants=VARIANTS,
    dims: tuple = (16, 256, 256),
    batch_sizes=(1, 2, 4, 8),
    trials: int = 30,
    warmup: int = 5,
    fan_in: int = 576,
    seed: int = 0,
) -> list[BenchResult]:
    """Median/IQR wall time and output size of each variant for each batch size.

    Inputs are random integer pre-activations in [-fan_in, fan_in] with random
    batch-norm parameters. Before timing, all variants are checked to agree on
    the sign bits when the parameters are already powers of two.
    """
    if trials < 30 or warmup < 5:
        raise ValueError("need trials >= 30 and warmup >= 5")
    if isinstance(variants, str):
        variants = (variants,)
    c, h, w = dims
    rng = np.random.default_rng(seed)
    state = random_bn_state(c, fan_in, rng)
    results = []
    for n in batch_sizes:
        fmap = rng.integers(-fan_in, fan_in + 1, (n, c, h, w), dtype=np.int32)
        fmap_f = fmap.astype(np.float32)
        kernels = make_kernels(state, fan_in, fmap.shape)
        for v in variants:
            arg = fmap_f if v == "BN" else fmap
            samples, outs = _time(kernels[v], arg, trials, warmup)
            q1, med, q3 = np.percentile(samples, [25, 50, 75])
            results.append(BenchResult(v, n, c, h, w, float(med), float(q3 - q1),
                                       int(sum(o.nbytes for o in outs)), storage_bits(CostModel(v, c)), trials))
    return results


def sign_agreement_gate(dims=(4, 16, 16), fan_in: int = 64, seed: int = 0) -> bool:
    """True when BN, SBN and BinaryBN give identical sign bits on power-of-two parameters."""
    rng = np.random.default_rng(seed)
    c, h, w = dims
    state = random_bn_state(c, fan_in, rng)
    state.epsilon = 0.0
    state.gamma = (np.sign(state.gamma) * 2.0 ** rng.integers(-2, 3, c)).astype(np.float32)
    state.var_r = (4.0 ** rng.integers(0, 4, c)).astype(np.float32)
    state.mu_r = np.round(state.mu_r).astype(np.float32)
    state.beta = (np.round(state.beta * 4) / 4 + 0.125).astype(np.float32)
    fmap = rng.integers(-fan_in, fan_in + 1, (2, c, h, w), dtype=np.int32)
    k = make_kernels(state, fan_in, fmap.shape)
    bn = k["BN"](fmap.astype(np.float32))[0] > 0
    sbn = k["SBN"](fmap)[0] > 0
    th = quantize_thresholds(fold_bn(state), fan_in)
    binary = binary_bn_act(fmap, th).unpack()
    return bool(np.array_equal(bn, sbn) and np.array_equal(bn, binary))


def plot_data(results: list[BenchResult]) -> dict:
    """Series per variant plus the reference-architecture channel ranges."""
    series = {}
    for r in results:
        series.setdefault(r.variant, []).append(
            {"batch": r.batch_size, "median_ns": r.median_ns, "iqr_ns": r.iqr_ns, "output_bytes": r.output_bytes}
        )
    refs = {}
    for arch, widths in REFERENCE_WIDTHS.items():
        lo, hi = min(widths), max(widths)
        refs[arch] = {
            "min_c": lo,
            "max_c": hi,
            "storage_bits": {v: [storage_bits(CostModel(v, lo)), storage_bits(CostModel(v, hi))] for v in VARIANTS},
        }
    dims = asdict(results[0]) if results else {}
    return {
        "feature_map": {k: dims.get(k) for k in ("c", "h", "w")},
        "series": series,
        "reference_lines": refs,
    }
