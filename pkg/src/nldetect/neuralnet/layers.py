"""Layer specifications, functional kernels and trainable layer objects.

Feature maps are arrays of shape ``(batch, frames, length)``; dense
activations are ``(batch, units)``. Kernels compute in the floating dtype
of their input (float64 unless a network is built for float32).

Convolutions are cross-correlations with "same" zero padding: output length
is ``ceil(length / stride)`` and the total padding
``max((out - 1) * stride + kernel - length, 0)`` is split with the extra
sample on the right. A transposed convolution with stride ``s`` maps length
``L`` to ``L * s`` and is the exact linear adjoint of the forward
convolution from length ``L * s`` to ``L`` with the same weights.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from ..errors import ConfigError, ContractError, DomainError

LEAKY_SLOPE = 0.2
ACTIVATIONS = ("leaky_relu", "sigmoid", "linear")


# --------------------------------------------------------------------------
# specifications


@dataclass(frozen=True)
class ConvLayerSpec:
    kernel: int
    filters: int
    stride: int = 1
    transposed: bool = False
    activation: str = "leaky_relu"
    padding: str = "same"

    def __post_init__(self):
        if self.kernel < 1 or self.filters < 1 or self.stride < 1:
            raise ConfigError("kernel, filters and stride must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.padding != "same":
            raise ConfigError("only 'same' zero padding is supported")


@dataclass(frozen=True)
class DenseLayerSpec:
    out_size: int
    activation: str = "leaky_relu"
    in_size: int | None = None

    def __post_init__(self):
        if self.out_size < 1 or (self.in_size is not None and self.in_size < 1):
            raise ConfigError("dense sizes must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class PoolSpec:
    width: int

    def __post_init__(self):
        if self.width < 1:
            raise ConfigError("pool width must be >= 1")


@dataclass(frozen=True)
class DropoutSpec:
    p: float

    def __post_init__(self):
        if not (0.0 <= self.p < 1.0):
            raise DomainError("dropout probability must lie in [0, 1)")


@dataclass(frozen=True)
class FlattenSpec:
    pass


@dataclass(frozen=True)
class ReshapeSpec:
    frames: int
    length: int


SPEC_TYPES = {
    "conv": ConvLayerSpec,
    "dense": DenseLayerSpec,
    "pool": PoolSpec,
    "dropout": DropoutSpec,
    "flatten": FlattenSpec,
    "reshape": ReshapeSpec,
}
_SPEC_NAMES = {v: k for k, v in SPEC_TYPES.items()}


def spec_to_dict(spec):
    return {"type": _SPEC_NAMES[type(spec)], **asdict(spec)}


def spec_from_dict(d):
    d = dict(d)
    kind = d.pop("type")
    if kind not in SPEC_TYPES:
        raise ConfigError(f"unknown layer type {kind!r}")
    return SPEC_TYPES[kind](**d)


# --------------------------------------------------------------------------
# functional kernels


def activation(x, kind: str, alpha: float = LEAKY_SLOPE):
    if kind == "leaky_relu":
        if not (0.0 < alpha < 1.0):
            raise DomainError("leaky slope must lie in (0, 1)")
        return np.maximum(x, alpha * x)
    if kind == "sigmoid":
        return expit(x)
    if kind == "linear":
        return x
    raise ConfigError(f"unknown activation {kind!r}")


def activation_grad(y_pre, y_post, g, kind: str, alpha: float = LEAKY_SLOPE):
    """Gradient through an activation, given its input and output."""
    if kind == "leaky_relu":
        return np.where(y_pre > 0, g, alpha * g)
    if kind == "sigmoid":
        return g * y_post * (1.0 - y_post)
    return g


def same_padding(length: int, kernel: int, stride: int):
    """Return ``(out_length, pad_left, pad_right)``."""
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return out, total // 2, total - total // 2


# Convolution engine. The batch is laid out channel-last as one long padded
# sequence and the stride is folded into the channel axis, so a strided
# correlation with kernel k becomes a unit-stride correlation with
# ceil(k / s) taps, each a single contiguous matrix product. Rows that
# straddle two samples are computed and discarded.


def _as_float(x):
    x = np.asarray(x)
    return x if x.dtype in (np.float32, np.float64) else x.astype(float)


def _plan(length, kernel, stride):
    out, left, _ = same_padding(length, kernel, stride)
    taps = -(-kernel // stride)
    return out, left, taps, out + taps - 1


def _fold(x, left, stride, q):
    # (B, C, L) -> (B * q, stride * C)
    b, c, length = x.shape
    buf = np.zeros((b, q * stride, c), dtype=x.dtype)
    buf[:, left : left + length, :] = x.transpose(0, 2, 1)
    return buf.reshape(b * q, stride * c)


def _unfold(x2, b, c, left, length, stride, q):
    # adjoint of _fold
    return x2.reshape(b, q * stride, c)[:, left : left + length, :].transpose(0, 2, 1)


def _pack(weight, stride):
    # (F, C, K) -> (taps, stride * C, F)
    f, c, k = weight.shape
    taps = -(-k // stride)
    wp = np.zeros((f, c, taps * stride), dtype=weight.dtype)
    wp[:, :, :k] = weight
    # contiguous so every tap is a BLAS-compatible operand
    return np.ascontiguousarray(wp.reshape(f, c, taps, stride).transpose(2, 3, 1, 0).reshape(taps, stride * c, f))


def _unpack(w2, f, c, k, stride):
    taps = w2.shape[0]
    wp = w2.reshape(taps, stride, c, f).transpose(3, 2, 0, 1).reshape(f, c, taps * stride)
    return wp[:, :, :k]


def _rows(x2, w2):
    return x2.shape[0] - w2.shape[0] + 1


def _correlate(x2, w2):
    # y[r] = sum_m x2[r + m] @ w2[m]
    n = _rows(x2, w2)
    y = x2[:n] @ w2[0]
    for m in range(1, w2.shape[0]):
        y += x2[m : m + n] @ w2[m]
    return y


def _correlate_adjoint(g, w2, total):
    dx = np.zeros((total, w2.shape[1]), dtype=g.dtype)
    n = g.shape[0]
    for m in range(w2.shape[0]):
        dx[m : m + n] += g @ w2[m].T
    return dx


def _correlate_wgrad(x2, g):
    n = g.shape[0]
    taps = x2.shape[0] - n + 1
    return np.stack([x2[m : m + n].T @ g for m in range(taps)])


def _to_rows(y, q, n):
    # (B, F, out) -> first n rows of the (B * q, F) layout
    b, f, out = y.shape
    buf = np.zeros((b, q, f), dtype=y.dtype)
    buf[:, :out, :] = y.transpose(0, 2, 1)
    return buf.reshape(b * q, f)[:n]


def _from_rows(y2, b, q, out):
    f = y2.shape[1]
    full = np.empty((b * q, f), dtype=y2.dtype)
    full[: len(y2)] = y2
    full[len(y2) :] = 0.0
    return full.reshape(b, q, f)[:, :out, :].transpose(0, 2, 1)


def _check_conv(x, weight, bias, in_axis):
    if x.ndim != 3:
        raise ContractError(f"expected (batch, frames, length) input, got shape {x.shape}")
    if weight.ndim != 3 or x.shape[1] != weight.shape[in_axis]:
        raise ContractError(
            f"input has {x.shape[1]} frames but weight of shape {weight.shape} expects {weight.shape[in_axis]}"
        )
    n_out = weight.shape[1 - in_axis]
    if bias is not None and bias.shape != (n_out,):
        raise ContractError(f"bias shape {bias.shape} does not match {n_out} filters")


def conv1d_linear(x, weight, bias, stride):
    """Pre-activation strided convolution; weight is ``(filters, in_frames, kernel)``.

    Returns ``(y, x2)`` where ``x2`` is the folded input kept for back-propagation.
    """
    x = _as_float(x)
    _check_conv(x, weight, bias, in_axis=1)
    b, c, length = x.shape
    out, left, _, q = _plan(length, weight.shape[2], stride)
    x2 = _fold(x, left, stride, q)
    y = _from_rows(_correlate(x2, _pack(weight, stride)), b, q, out)
    if bias is not None:
        y = y + bias[None, :, None]
    return np.ascontiguousarray(y), x2


def conv1d_backward(g, x2, weight, stride, length, param_grads=True):
    """Gradients ``(dx, dW, db)`` of a convolution given ``g = dL/dy``;
    ``dW`` and ``db`` are None when ``param_grads`` is False."""
    b, f, out = g.shape
    _, c, k = weight.shape
    _, left, _, q = _plan(length, k, stride)
    w2 = _pack(weight, stride)
    g2 = _to_rows(g, q, _rows(x2, w2))
    dx = np.ascontiguousarray(_unfold(_correlate_adjoint(g2, w2, b * q), b, c, left, length, stride, q))
    if not param_grads:
        return dx, None, None
    dw = _unpack(_correlate_wgrad(x2, g2), f, c, k, stride)
    return dx, dw, g.sum(axis=(0, 2))


def conv1d_transposed_linear(u, weight, bias, stride):
    """Pre-activation transposed convolution; weight is ``(in_frames, filters, kernel)``."""
    u = _as_float(u)
    _check_conv(u, weight, bias, in_axis=0)
    b, _, lt = u.shape
    _, f, k = weight.shape
    length = lt * stride
    _, left, _, q = _plan(length, k, stride)
    w2 = _pack(weight, stride)
    u2 = _to_rows(u, q, b * q - w2.shape[0] + 1)
    y = _unfold(_correlate_adjoint(u2, w2, b * q), b, f, left, length, stride, q)
    if bias is not None:
        y = y + bias[None, :, None]
    return np.ascontiguousarray(y)


def conv1d_transposed_backward(g, u, weight, stride, param_grads=True):
    """Gradients ``(du, dW, db)`` of a transposed convolution given ``g = dL/dy``;
    ``dW`` and ``db`` are None when ``param_grads`` is False."""
    b, cin, lt = u.shape
    _, f, k = weight.shape
    length = lt * stride
    _, left, _, q = _plan(length, k, stride)
    w2 = _pack(weight, stride)
    g2 = _fold(g, left, stride, q)
    du = np.ascontiguousarray(_from_rows(_correlate(g2, w2), b, q, lt))
    if not param_grads:
        return du, None, None
    u2 = _to_rows(u, q, _rows(g2, w2))
    dw = _unpack(_correlate_wgrad(g2, u2), cin, f, k, stride)
    return du, dw, g.sum(axis=(0, 2))


def _as_batch(x):
    x = _as_float(x)
    return (x[None], True) if x.ndim == 2 else (x, False)


def conv1d_forward(x, spec: ConvLayerSpec, weight, bias, alpha=LEAKY_SLOPE):
    """Convolution plus activation; ``x`` is ``(frames, length)`` or batched."""
    xb, single = _as_batch(x)
    if spec.transposed:
        raise ContractError("use conv1d_transposed_forward for transposed layers")
    if weight.shape[0] != spec.filters or weight.shape[2] != spec.kernel:
        raise ContractError(f"weight shape {weight.shape} does not match {spec}")
    y, _ = conv1d_linear(xb, weight, bias, spec.stride)
    y = activation(y, spec.activation, alpha)
    return y[0] if single else y


def conv1d_transposed_forward(x, spec: ConvLayerSpec, weight, bias, alpha=LEAKY_SLOPE):
    xb, single = _as_batch(x)
    if weight.shape[1] != spec.filters or weight.shape[2] != spec.kernel:
        raise ContractError(f"weight shape {weight.shape} does not match {spec}")
    y = conv1d_transposed_linear(xb, weight, bias, spec.stride)
    y = activation(y, spec.activation, alpha)
    return y[0] if single else y


def maxpool1d(x, width: int):
    """Non-overlapping max pooling; a trailing partial block is pooled as is.

    Returns ``(pooled, argmax)`` where ``argmax`` indexes positions within
    each block.
    """
    if width < 1:
        raise DomainError("pool width must be >= 1")
    xb, single = _as_batch(x)
    b, c, length = xb.shape
    out = -(-length // width)
    if out * width != length:
        xb = np.pad(xb, ((0, 0), (0, 0), (0, out * width - length)), constant_values=-np.inf)
    blocks = xb.reshape(b, c, out, width)
    idx = np.argmax(blocks, axis=-1)
    y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return (y[0], idx[0]) if single else (y, idx)


def maxpool1d_backward(g, idx, width, length):
    b, c, out = g.shape
    d = np.zeros((b, c, out, width), dtype=g.dtype)
    np.put_along_axis(d, idx[..., None], g[..., None], axis=-1)
    return d.reshape(b, c, out * width)[:, :, :length]


def dense_forward(x, weight, bias, kind="linear", alpha=LEAKY_SLOPE):
    """``activation(W x + b)``; weight is ``(out, in)``."""
    x = _as_float(x)
    if x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ContractError(f"dense shapes do not match: x {x.shape}, W {weight.shape}, b {bias.shape}")
    return activation(x @ weight.T + bias, kind, alpha)


def dropout(x, p: float, training: bool, seed=None):
    """Inverted dropout: zero with probability ``p``, rescale survivors by ``1/(1-p)``."""
    if not (0.0 <= p < 1.0):
        raise DomainError("dropout probability must lie in [0, 1)")
    x = _as_float(x)
    if not training or p == 0.0:
        return x
    gen = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mask = (gen.random(x.shape) >= p) / (1.0 - p)
    return x * mask


# --------------------------------------------------------------------------
# layer objects


def _uniform(rng, shape, limit):
    return rng.uniform(-limit, limit, size=shape)


def _init_limit(kind, fan_in, fan_out):
    if kind == "leaky_relu":
        return math.sqrt(6.0 / fan_in)  # He-uniform
    return math.sqrt(6.0 / (fan_in + fan_out))  # Xavier-uniform


class Layer:
    """Base class. ``params``/``grads`` map names to arrays."""

    spec = None

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, g, param_grads=True, from_logits=False):
        """Return ``dL/d(input)``; also store parameter gradients unless
        ``param_grads`` is False, in which case they are cleared. With
        ``from_logits`` the upstream gradient is taken with respect to the
        pre-activation, so the activation derivative is skipped."""
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise ContractError(f"{type(self).__name__}.backward called before forward")
        return self._cache


class Conv1D(Layer):
    def __init__(self, spec: ConvLayerSpec, in_shape, rng):
        super().__init__()
        self.spec = spec
        frames, length = in_shape
        k, f = spec.kernel, spec.filters
        limit = _init_limit(spec.activation, frames * k, f * k)
        if spec.transposed:
            self.params["W"] = _uniform(rng, (frames, f, k), limit)
        else:
            self.params["W"] = _uniform(rng, (f, frames, k), limit)
        self.params["b"] = np.zeros(f)
        self.in_shape = (frames, length)

    def out_shape(self, in_shape):
        frames, length = in_shape
        if self.spec.transposed:
            return (self.spec.filters, length * self.spec.stride)
        return (self.spec.filters, -(-length // self.spec.stride))

    def forward(self, x, training=False, rng=None):
        W, b, s = self.params["W"], self.params["b"], self.spec.stride
        if self.spec.transposed:
            pre = conv1d_transposed_linear(x, W, b, s)
            folded = None
        else:
            pre, folded = conv1d_linear(x, W, b, s)
        post = activation(pre, self.spec.activation)
        self._cache = (x, folded, pre, post)
        return post

    def backward(self, g, param_grads=True, from_logits=False):
        x, folded, pre, post = self._need_cache()
        W, s = self.params["W"], self.spec.stride
        if not from_logits:
            g = activation_grad(pre, post, g, self.spec.activation)
        if self.spec.transposed:
            dx, dw, db = conv1d_transposed_backward(g, x, W, s, param_grads)
        else:
            dx, dw, db = conv1d_backward(g, folded, W, s, x.shape[2], param_grads)
        self.grads = {"W": dw, "b": db} if param_grads else {}
        return dx


class Dense(Layer):
    def __init__(self, spec: DenseLayerSpec, in_shape, rng):
        super().__init__()
        self.spec = spec
        if len(in_shape) != 1:
            raise ConfigError(f"dense layer needs a flat input, got shape {in_shape}")
        n_in = in_shape[0]
        if spec.in_size is not None and spec.in_size != n_in:
            raise ConfigError(f"dense layer declares in_size {spec.in_size} but receives {n_in}")
        limit = _init_limit(spec.activation, n_in, spec.out_size)
        self.params["W"] = _uniform(rng, (spec.out_size, n_in), limit)
        self.params["b"] = np.zeros(spec.out_size)

    def out_shape(self, in_shape):
        return (self.spec.out_size,)

    def forward(self, x, training=False, rng=None):
        W, b = self.params["W"], self.params["b"]
        if x.ndim != 2 or x.shape[1] != W.shape[1]:
            raise ContractError(f"dense layer expects (batch, {W.shape[1]}), got {x.shape}")
        pre = x @ W.T + b
        post = activation(pre, self.spec.activation)
        self._cache = (x, pre, post)
        return post

    def backward(self, g, param_grads=True, from_logits=False):
        x, pre, post = self._need_cache()
        if not from_logits:
            g = activation_grad(pre, post, g, self.spec.activation)
        self.grads = {"W": g.T @ x, "b": g.sum(axis=0)} if param_grads else {}
        return g @ self.params["W"]


class MaxPool1D(Layer):
    def __init__(self, spec: PoolSpec, in_shape, rng=None):
        super().__init__()
        self.spec = spec

    def out_shape(self, in_shape):
        frames, length = in_shape
        return (frames, -(-length // self.spec.width))

    def forward(self, x, training=False, rng=None):
        y, idx = maxpool1d(x, self.spec.width)
        self._cache = (idx, x.shape[2])
        return y

    def backward(self, g, param_grads=True, from_logits=False):
        idx, length = self._need_cache()
        return maxpool1d_backward(g, idx, self.spec.width, length)


class Dropout(Layer):
    def __init__(self, spec: DropoutSpec, in_shape, rng=None):
        super().__init__()
        self.spec = spec

    def forward(self, x, training=False, rng=None):
        p = self.spec.p
        if training and p > 0.0:
            if rng is None:
                raise ContractError("dropout in training mode needs a random generator")
            mask = (rng.random(x.shape, dtype=x.dtype) >= p) * x.dtype.type(1.0 / (1.0 - p))
        else:
            mask = None
        self._cache = (mask,)
        return x if mask is None else x * mask

    def backward(self, g, param_grads=True, from_logits=False):
        (mask,) = self._need_cache()
        return g if mask is None else g * mask


class Flatten(Layer):
    def __init__(self, spec: FlattenSpec, in_shape, rng=None):
        super().__init__()
        self.spec = spec

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, training=False, rng=None):
        self._cache = (x.shape,)
        return x.reshape(x.shape[0], -1)

    def backward(self, g, param_grads=True, from_logits=False):
        (shape,) = self._need_cache()
        return g.reshape(shape)


class Reshape(Layer):
    def __init__(self, spec: ReshapeSpec, in_shape, rng=None):
        super().__init__()
        self.spec = spec
        if int(np.prod(in_shape)) != spec.frames * spec.length:
            raise ConfigError(f"cannot reshape {in_shape} to ({spec.frames}, {spec.length})")

    def out_shape(self, in_shape):
        return (self.spec.frames, self.spec.length)

    def forward(self, x, training=False, rng=None):
        self._cache = (x.shape,)
        return x.reshape(x.shape[0], self.spec.frames, self.spec.length)

    def backward(self, g, param_grads=True, from_logits=False):
        (shape,) = self._need_cache()
        return g.reshape(shape)


LAYER_TYPES = {
    ConvLayerSpec: Conv1D,
    DenseLayerSpec: Dense,
    PoolSpec: MaxPool1D,
    DropoutSpec: Dropout,
    FlattenSpec: Flatten,
    ReshapeSpec: Reshape,
}


def make_layer(spec, in_shape, rng):
    if isinstance(spec, ConvLayerSpec) and len(in_shape) != 2:
        raise ConfigError(f"convolution needs (frames, length) input, got {in_shape}")
    if isinstance(spec, PoolSpec) and len(in_shape) != 2:
        raise ConfigError(f"pooling needs (frames, length) input, got {in_shape}")
    return LAYER_TYPES[type(spec)](spec, in_shape, rng)
