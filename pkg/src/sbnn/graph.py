"""Sequential layer graph with hand-written forward and backward passes.

Layer vocabulary: Conv, Dense, MaxPool, BatchNorm, an activation that is
either the scaled tanh (soft mode) or sign with a straight-through gradient
(hard modes), and a softmax cross-entropy head. The tanh scale ``nu`` is
passed in by the caller on every forward; layers never store it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DegenerateBatch, ShapeMismatch, StaleCache
from .selfbin.weights import ConstrainedWeights, Mode, sign

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
INPUT_SCALE = 128  # u8 pixel codes map to (code - 128) / 128


# ---------------------------------------------------------------------------
# elementwise binarizers


def sign_forward(x: np.ndarray) -> np.ndarray:
    return sign(x)


def ste_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Straight-through estimate of d sign(x)/dx: pass where |x| <= 1."""
    return np.where(np.abs(x) <= 1, upstream, 0).astype(upstream.dtype, copy=False)


def scaled_tanh_forward(x: np.ndarray, nu: float) -> np.ndarray:
    return np.tanh(nu * x).astype(x.dtype, copy=False)


def scaled_tanh_backward(x: np.ndarray, nu: float, upstream: np.ndarray) -> np.ndarray:
    t = np.tanh(nu * x)
    return (upstream * nu * (1.0 - t * t)).astype(upstream.dtype, copy=False)


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BatchNormState:
    mu_r: np.ndarray
    var_r: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    momentum: float = BN_MOMENTUM
    epsilon: float = BN_EPS

    @classmethod
    def fresh(cls, channels: int, dtype=T.DTYPE) -> "BatchNormState":
        return cls(
            np.zeros(channels, dtype), np.ones(channels, dtype), np.ones(channels, dtype), np.zeros(channels, dtype)
        )

    @property
    def sigma_r(self) -> np.ndarray:
        return np.sqrt(self.var_r + self.epsilon)


def _bn_axes(x: np.ndarray) -> tuple:
    return (0,) if x.ndim == 2 else (0, 2, 3)


def _per_channel(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def batchnorm_forward_train(x: np.ndarray, state: BatchNormState, cache: dict | None = None) -> np.ndarray:
    """Normalize with batch statistics and update the running averages in place."""
    axes = _bn_axes(x)
    count = x.size // x.shape[1]
    if count < 2:
        raise DegenerateBatch(f"batchnorm needs >= 2 elements per channel, got {count}")
    mean = x.mean(axis=axes, dtype=np.float64)
    var = x.var(axis=axes, dtype=np.float64)
    std = np.sqrt(var + state.epsilon)
    xhat = ((x - _per_channel(mean, x.ndim)) / _per_channel(std, x.ndim)).astype(x.dtype)
    out = xhat * _per_channel(state.gamma, x.ndim) + _per_channel(state.beta, x.ndim)
    m = state.momentum
    state.mu_r[...] = (1 - m) * state.mu_r + m * mean
    state.var_r[...] = (1 - m) * state.var_r + m * var
    if cache is not None:
        cache.update(xhat=xhat, std=std.astype(x.dtype))
    return out.astype(x.dtype, copy=False)


def batchnorm_forward_infer(x: np.ndarray, state: BatchNormState) -> np.ndarray:
    """``(x - mu_r) / sigma_r * gamma + beta`` with the running statistics."""
    n = x.ndim
    out = (x - _per_channel(state.mu_r, n)) / _per_channel(state.sigma_r, n) * _per_channel(state.gamma, n)
    return (out + _per_channel(state.beta, n)).astype(x.dtype, copy=False)


def batchnorm_backward(upstream: np.ndarray, state: BatchNormState, cache: dict):
    """Gradients (dx, dgamma, dbeta) of the train-mode forward."""
    xhat, std = cache["xhat"], cache["std"]
    axes = _bn_axes(upstream)
    count = upstream.size // upstream.shape[1]
    dbeta = upstream.sum(axis=axes)
    dgamma = (upstream * xhat).sum(axis=axes)
    n = upstream.ndim
    scale = _per_channel(state.gamma / std, n)
    dx = scale * (upstream - _per_channel(dbeta, n) / count - xhat * _per_channel(dgamma, n) / count)
    return dx.astype(upstream.dtype, copy=False), dgamma.astype(state.gamma.dtype), dbeta.astype(state.beta.dtype)


# ---------------------------------------------------------------------------
# softmax cross-entropy


def softmax_ce_forward(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and the softmax probabilities."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(len(labels)), labels].mean()
    return float(loss), np.exp(logp)


def softmax_ce_backward(probs: np.ndarray, labels: np.ndarray, dtype=T.DTYPE) -> np.ndarray:
    g = probs.copy()
    g[np.arange(len(labels)), labels] -= 1.0
    return (g / len(labels)).astype(dtype)


# ---------------------------------------------------------------------------
# layers


@dataclass
class Context:
    nu: float = 1.0
    train: bool = False
    binary: bool = False  # frozen-equivalent view: sign weights and sign activations
    use_alpha: bool = False


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray
    clip: bool = False  # hard-mode latent weights are kept in [-1, 1]


class Layer:
    kind = "layer"

    def __init__(self):
        self._cache = None

    def forward(self, x, ctx: Context):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def params(self) -> list[Param]:
        return []

    def _take_cache(self):
        if self._cache is None:
            raise StaleCache(f"{self.kind}.backward called without a matching training forward")
        cache, self._cache = self._cache, None
        return cache


class _Weighted(Layer):
    def __init__(self, P: np.ndarray, mode: Mode, binarize: bool, per_channel: bool = True):
        super().__init__()
        self.weights = ConstrainedWeights(P, mode, binarize=binarize, alpha_per_channel=per_channel)
        self.grad_P = np.zeros_like(P)

    def params(self):
        return [Param(f"{self.name}.P", self.weights.P, self.grad_P, clip=self.weights.binarize and self.weights.mode.hard)]


class Conv(_Weighted):
    kind = "Conv"

    def __init__(self, P, stride=1, pad=0, pad_value=-1.0, mode=Mode.SOFT, binarize=True, name="conv"):
        super().__init__(P, mode, binarize)
        self.stride, self.pad, self.pad_value, self.name = stride, pad, pad_value, name

    @property
    def out_channels(self):
        return self.weights.P.shape[0]

    @property
    def fan_in(self):
        return int(np.prod(self.weights.P.shape[1:]))

    def forward(self, x, ctx):
        W = self.weights.forward(ctx.nu, ctx.binary, ctx.use_alpha)
        out = T.conv2d(x, W, self.stride, self.pad, self.pad_value)
        if ctx.train:
            self._cache = (x, W, ctx.nu)
        return out

    def backward(self, grad):
        x, W, nu = self._take_cache()
        gx, gW = T.conv2d_backward(x, W, grad, self.stride, self.pad, self.pad_value)
        self.grad_P[...] = self.weights.backward(gW, nu)
        return gx


class Dense(_Weighted):
    """Fully connected layer; flattens NCHW input row-major. Weights are ``(out, in)``."""

    kind = "Dense"

    def __init__(self, P, mode=Mode.SOFT, binarize=True, classifier=False, name="dense"):
        super().__init__(P, mode, binarize, per_channel=not classifier)
        self.classifier, self.name = classifier, name

    @property
    def out_channels(self):
        return self.weights.P.shape[0]

    @property
    def fan_in(self):
        return self.weights.P.shape[1]

    def forward(self, x, ctx):
        x2 = x.reshape(x.shape[0], -1)
        if x2.shape[1] != self.fan_in:
            raise ShapeMismatch(f"{self.name}: expected {self.fan_in} inputs, got {x2.shape[1]}")
        W = self.weights.forward(ctx.nu, ctx.binary, ctx.use_alpha)
        if ctx.train:
            self._cache = (x.shape, x2, W, ctx.nu)
        return T.matmul(x2, W.T)

    def backward(self, grad):
        shape, x2, W, nu = self._take_cache()
        self.grad_P[...] = self.weights.backward(grad.T @ x2, nu)
        return (grad @ W).reshape(shape)


class MaxPool(Layer):
    kind = "MaxPool"

    def forward(self, x, ctx):
        out, idx = T.maxpool2x2(x)
        if ctx.train:
            self._cache = (x.shape, idx)
        return out

    def backward(self, grad):
        shape, idx = self._take_cache()
        return T.maxpool2x2_backward(shape, idx, grad)


class BatchNorm(Layer):
    kind = "BatchNorm"

    def __init__(self, channels: int, dtype=T.DTYPE, name="bn"):
        super().__init__()
        self.state = BatchNormState.fresh(channels, dtype)
        self.grad_gamma = np.zeros(channels, dtype)
        self.grad_beta = np.zeros(channels, dtype)
        self.name = name

    def forward(self, x, ctx):
        if x.shape[1] != self.state.gamma.size:
            raise ShapeMismatch(f"{self.name}: {x.shape[1]} channels, state has {self.state.gamma.size}")
        if not ctx.train:
            return batchnorm_forward_infer(x, self.state)
        cache = {}
        out = batchnorm_forward_train(x, self.state, cache)
        self._cache = cache
        return out

    def backward(self, grad):
        dx, dg, db = batchnorm_backward(grad, self.state, self._take_cache())
        self.grad_gamma[...] = dg
        self.grad_beta[...] = db
        return dx

    def params(self):
        return [
            Param(f"{self.name}.gamma", self.state.gamma, self.grad_gamma),
            Param(f"{self.name}.beta", self.state.beta, self.grad_beta),
        ]


class Activation(Layer):
    """Scaled tanh in soft mode, sign with STE in hard modes; always sign in the binary view."""

    def __init__(self, mode=Mode.SOFT):
        super().__init__()
        self.mode = Mode(mode)

    @property
    def kind(self):
        return "SignSTEAct" if self.mode.hard else "ScaledTanhAct"

    def forward(self, x, ctx):
        if ctx.train:
            self._cache = (x, ctx.nu)
        if ctx.binary or self.mode.hard:
            return sign_forward(x)
        return scaled_tanh_forward(x, ctx.nu)

    def backward(self, grad):
        x, nu = self._take_cache()
        if self.mode.hard:
            return ste_backward(x, grad)
        return scaled_tanh_backward(x, nu, grad)


class SoftmaxCE(Layer):
    kind = "SoftmaxCE"

    def forward(self, logits, labels):
        loss, probs = softmax_ce_forward(logits, labels)
        self._cache = (probs, labels, logits.dtype)
        return loss

    def backward(self, grad=1.0):
        probs, labels, dtype = self._take_cache()
        return softmax_ce_backward(probs, labels, dtype) * np.asarray(grad, dtype)


# ---------------------------------------------------------------------------
# model


def quantize_input_int8(x: np.ndarray) -> np.ndarray:
    q = np.clip(np.floor(x * INPUT_SCALE + 0.5), -INPUT_SCALE, INPUT_SCALE - 1)
    return (q / INPUT_SCALE).astype(x.dtype)


@dataclass
class ModelGraph:
    """Ordered layers plus the metadata needed to freeze them.

    ``input_mode`` decides how real inputs reach the first layer: ``"int8"``
    snaps them to the 8-bit grid, ``"median"`` thresholds each channel at
    ``input_medians`` (u8 codes) to +-1.
    """

    layers: list
    input_shape: tuple
    n_classes: int
    mode: Mode = Mode.SOFT
    input_mode: str = "int8"
    input_medians: np.ndarray | None = None
    arch: str = ""
    nu_final: float = 1.0
    loss: SoftmaxCE = field(default_factory=SoftmaxCE)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        validate_layer_order(self.layers)

    @property
    def weighted(self) -> list[_Weighted]:
        return [l for l in self.layers if isinstance(l, _Weighted)]

    @property
    def batchnorms(self) -> list[BatchNorm]:
        return [l for l in self.layers if isinstance(l, BatchNorm)]

    def prepare_input(self, x: np.ndarray) -> np.ndarray:
        if self.input_mode == "int8":
            return quantize_input_int8(x)
        if self.input_medians is None:
            raise ConfigError("median input mode needs input_medians")
        med = (self.input_medians.astype(np.float64) - INPUT_SCALE) / INPUT_SCALE
        return sign(x - _per_channel(med, x.ndim).astype(x.dtype)).astype(x.dtype)

    def forward(self, x, nu=1.0, train=False, binary=False, use_alpha=False):
        ctx = Context(nu=nu, train=train, binary=binary, use_alpha=use_alpha)
        h = self.prepare_input(x)
        for layer in self.layers:
            h = layer.forward(h, ctx)
        return h

    def loss_and_backward(self, x, labels, nu) -> tuple[float, np.ndarray]:
        """One training forward/backward; gradients land in each ``Param.grad``."""
        logits = self.forward(x, nu, train=True)
        loss = self.loss.forward(logits, labels)
        g = self.loss.backward()
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return loss, logits

    def predict(self, x, nu=1.0, binary=False, use_alpha=False) -> np.ndarray:
        return np.argmax(self.forward(x, nu, binary=binary, use_alpha=use_alpha), axis=1)

    def params(self) -> list[Param]:
        return [p for l in self.layers for p in l.params()]


def validate_layer_order(layers: list) -> None:
    """Every hidden Conv/Dense is followed by MaxPool*, BatchNorm, activation; the last is the classifier."""
    weighted = [i for i, l in enumerate(layers) if isinstance(l, _Weighted)]
    if not weighted:
        raise ConfigError("model has no Conv/Dense layer")
    last = weighted[-1]
    if not isinstance(layers[last], Dense) or last != len(layers) - 1:
        raise ConfigError("the final layer must be the Dense classifier")
    for i in weighted[:-1]:
        j = i + 1
        while j < len(layers) and isinstance(layers[j], MaxPool):
            j += 1
        if not (
            j + 1 < len(layers) and isinstance(layers[j], BatchNorm) and isinstance(layers[j + 1], Activation)
        ):
            raise ConfigError(f"layer {i} ({layers[i].kind}) must be followed by [pool] -> bn -> act")


# ---------------------------------------------------------------------------
# construction from an architecture string


def parse_arch(arch: str) -> list[tuple]:
    """Parse ``"conv:16:3:1:1, pool, bn, act, dense:10"`` into layer tuples.

    Tokens: ``conv:COUT:K[:STRIDE[:PAD]][:float]``, ``dense:N[:float]``,
    ``pool``, ``bn``, ``act``. ``float`` opts the layer out of binarization.
    """
    out = []
    for raw in arch.split(","):
        tok = raw.strip()
        if not tok:
            continue
        parts = tok.split(":")
        name, rest = parts[0].lower(), parts[1:]
        fp = bool(rest) and rest[-1] == "float"
        if fp:
            rest = rest[:-1]
        try:
            nums = [int(v) for v in rest]
        except ValueError:
            raise ConfigError(f"bad layer token {tok!r}") from None
        if name == "conv" and 2 <= len(nums) <= 4:
            cout, k = nums[:2]
            stride = nums[2] if len(nums) > 2 else 1
            pad = nums[3] if len(nums) > 3 else 0
            out.append(("conv", cout, k, stride, pad, not fp))
        elif name == "dense" and len(nums) == 1:
            out.append(("dense", nums[0], not fp))
        elif name in ("pool", "bn", "act") and not nums:
            out.append((name,))
        else:
            raise ConfigError(f"bad layer token {tok!r}")
    return out


def build_model(
    arch: str,
    input_shape: tuple,
    n_classes: int,
    mode: Mode | str = Mode.SOFT,
    input_mode: str = "int8",
    input_medians=None,
    seed: int = 0,
    dtype=T.DTYPE,
    init_range: float = 0.1,
) -> ModelGraph:
    """Instantiate a ModelGraph; P is drawn uniformly from [-init_range, init_range]."""
    if input_mode not in ("int8", "median"):
        raise ConfigError(f"input_mode must be int8 or median, got {input_mode!r}")
    mode = Mode(mode)
    rng = np.random.default_rng(seed)
    specs = parse_arch(arch)
    shape = tuple(input_shape)
    layers: list = []
    n_weighted = sum(s[0] in ("conv", "dense") for s in specs)
    seen = 0
    for spec in specs:
        kind = spec[0]
        if kind == "conv":
            _, cout, k, stride, pad, binarize = spec
            if len(shape) != 3:
                raise ConfigError("conv layers need a C,H,W input")
            P = rng.uniform(-init_range, init_range, (cout, shape[0], k, k)).astype(dtype)
            # the first layer sees 8-bit inputs where zero exists; everything after is +-1
            pad_value = 0.0 if (not layers and input_mode == "int8") else -1.0
            layers.append(Conv(P, stride, pad, pad_value, mode, binarize, name=f"conv{len(layers)}"))
            shape = (cout, T.conv_output_size(shape[1], k, stride, pad), T.conv_output_size(shape[2], k, stride, pad))
            seen += 1
        elif kind == "dense":
            _, n, binarize = spec
            seen += 1
            classifier = seen == n_weighted
            if classifier and n != n_classes:
                raise ConfigError(f"classifier width {n} != number of classes {n_classes}")
            P = rng.uniform(-init_range, init_range, (n, int(np.prod(shape)))).astype(dtype)
            layers.append(Dense(P, mode, binarize, classifier=classifier, name=f"dense{len(layers)}"))
            shape = (n,)
        elif kind == "pool":
            if len(shape) != 3:
                raise ConfigError("pool needs a C,H,W input")
            layers.append(MaxPool())
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif kind == "bn":
            layers.append(BatchNorm(shape[0], dtype, name=f"bn{len(layers)}"))
        elif kind == "act":
            layers.append(Activation(mode))
    medians = None if input_medians is None else np.asarray(input_medians, dtype=np.uint8)
    return ModelGraph(layers, tuple(input_shape), n_classes, mode, input_mode, medians, arch)
