"""1-D CNN autoencoder: assembly, training with early stopping, scoring."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, DomainError
from .neuralnet import (
    ConvLayerSpec,
    DenseLayerSpec,
    FlattenSpec,
    Network,
    OptimizerState,
    PoolSpec,
    ReshapeSpec,
    adam_step,
    l2_penalty,
)
from .neuralnet.losses import mae_grad

logger = logging.getLogger(__name__)


@dataclass
class AEConfig:
    encoder_kernels: list
    encoder_filters: list
    encoder_strides: list
    decoder_kernels: list
    decoder_filters: list
    decoder_strides: list
    pool_widths: list | None = None  # one per encoder conv, default 2
    latent: int = 32
    window_len: int = 500
    l2: float = 1e-6
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    decoder_frames: int | None = None  # default: last encoder filter count
    output_activation: str = "linear"
    dtype: str = "float64"  # compute precision; float32 trades exactness for speed

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be 'float32' or 'float64'", field="dtype")
        if self.pool_widths is None:
            self.pool_widths = [2] * len(self.encoder_kernels)
        for prefix in ("encoder", "decoder"):
            lens = {len(getattr(self, f"{prefix}_{k}")) for k in ("kernels", "filters", "strides")}
            if len(lens) != 1 or 0 in lens:
                raise ConfigError(f"{prefix} kernels/filters/strides must be non-empty and equally long")
        if len(self.pool_widths) != len(self.encoder_kernels):
            raise ConfigError("need one pool width per encoder layer", field="pool_widths")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1", field="patience")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", field="batch_size")
        if self.latent >= self.window_len:
            raise ConfigError(
                f"latent size {self.latent} must be smaller than the window length {self.window_len}",
                field="latent",
            )
        if self.decoder_filters[-1] != 1:
            raise ConfigError("the last decoder layer must have 1 filter (single-channel windows)",
                              field="decoder_filters")

    @classmethod
    def from_dict(cls, d, **overrides):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown AE keys {sorted(unknown)}")
        return cls(**{**d, **overrides})

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_val_loss: float = math.inf
    best_epoch: int = 0


class AutoEncoder:
    """Encoder ``g`` and decoder ``f`` with ``x_rec = f(g(x))``."""

    def __init__(self, encoder: Network, decoder: Network, config: AEConfig):
        self.encoder = encoder
        self.decoder = decoder
        self.config = config

    def __iter__(self):
        return iter((self.encoder, self.decoder))

    @property
    def window_len(self):
        return self.encoder.input_shape[1]

    def forward(self, x, training=False):
        return self.decoder.forward(self.encoder.forward(x, training), training)

    def backward(self, g):
        return self.encoder.backward(self.decoder.backward(g))

    def params(self):
        return self.encoder.params() + self.decoder.params()

    def grads(self):
        return self.encoder.grads() + self.decoder.grads()

    def get_flat(self):
        return np.concatenate([self.encoder.get_flat(), self.decoder.get_flat()])

    def set_flat(self, flat):
        n = self.encoder.n_params
        self.encoder.set_flat(flat[:n])
        self.decoder.set_flat(flat[n:])


def encoder_specs(config: AEConfig):
    specs = []
    for k, f, s, w in zip(config.encoder_kernels, config.encoder_filters,
                          config.encoder_strides, config.pool_widths):
        specs.append(ConvLayerSpec(kernel=k, filters=f, stride=s, activation="leaky_relu"))
        if w > 1:
            specs.append(PoolSpec(w))
    specs += [FlattenSpec(), DenseLayerSpec(config.latent, "leaky_relu")]
    return specs


def decoder_specs(config: AEConfig):
    up = int(np.prod(config.decoder_strides))
    if config.window_len % up:
        raise ConfigError(
            f"window length {config.window_len} is not divisible by the decoder upsampling {up}",
            field="decoder_strides",
        )
    frames = config.decoder_frames or config.encoder_filters[-1]
    length = config.window_len // up
    specs = [DenseLayerSpec(frames * length, "leaky_relu"), ReshapeSpec(frames, length)]
    n = len(config.decoder_kernels)
    for i, (k, f, s) in enumerate(zip(config.decoder_kernels, config.decoder_filters, config.decoder_strides)):
        act = config.output_activation if i == n - 1 else "leaky_relu"
        specs.append(ConvLayerSpec(kernel=k, filters=f, stride=s, transposed=True, activation=act))
    return specs


def build_ae(config: AEConfig, seed=0) -> AutoEncoder:
    """Assemble encoder (conv + pool, dense bottleneck) and decoder (dense stem, transposed conv)."""
    ss = np.random.SeedSequence(seed)
    s_enc, s_dec = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    enc = Network(encoder_specs(config), (1, config.window_len), seed=s_enc, name="encoder", dtype=config.dtype)
    dec = Network(decoder_specs(config), (config.latent,), seed=s_dec, name="decoder", dtype=config.dtype)
    if dec.output_shape != (1, config.window_len):
        raise ConfigError(f"decoder output {dec.output_shape} != (1, {config.window_len})")
    return AutoEncoder(enc, dec, config)


def as_windows(windows, length=None):
    """Stack windows into ``(N, 1, L)``; accepts arrays or objects with ``values``."""
    if isinstance(windows, np.ndarray):
        arr = windows.astype(float, copy=False)
    else:
        windows = list(windows)
        if not windows:
            return np.zeros((0, 1, length or 0))
        arr = np.stack([np.asarray(getattr(w, "values", w), dtype=float) for w in windows])
    if arr.ndim == 1:
        arr = arr[None, None, :]
    elif arr.ndim == 2:
        arr = arr[:, None, :]
    if length is not None and arr.shape[-1] != length and arr.shape[0] > 0:
        raise DomainError(f"window length {arr.shape[-1]} != model window length {length}")
    return arr


def _batch_mae(ae, x, chunk=256):
    out = np.empty(len(x))
    for i in range(0, len(x), chunk):
        xb = x[i : i + chunk]
        rec = ae.forward(xb)
        out[i : i + chunk] = np.mean(np.abs(xb - rec), axis=(1, 2))
    return out


def train_ae(ae: AutoEncoder, train, val, config: AEConfig | None = None, seed=0, max_epochs=None):
    """Minimise MAE + ``l2 * ||theta||^2`` with ADAM and early stopping.

    Training stops when the validation MAE (without the penalty) has not
    improved for ``patience`` consecutive epochs, or after ``max_epochs``.
    The parameters of the best validation epoch are restored.
    """
    config = config or ae.config
    max_epochs = config.max_epochs if max_epochs is None else max_epochs
    x_tr = as_windows(train, ae.window_len)
    x_va = as_windows(val, ae.window_len)
    if len(x_tr) == 0 or len(x_va) == 0:
        raise DomainError("training and validation sets must be non-empty")
    rng = np.random.default_rng(seed)
    opt = OptimizerState(lr=config.learning_rate)
    params = ae.params()
    report = TrainReport()
    best_flat = ae.get_flat()
    wait = 0
    bs = config.batch_size
    for epoch in range(1, max_epochs + 1):
        perm = rng.permutation(len(x_tr))
        total, count = 0.0, 0
        for i in range(0, len(perm), bs):
            xb = x_tr[perm[i : i + bs]]
            rec = ae.forward(xb, training=True)
            mae = float(np.mean(np.abs(xb - rec)))
            pen, pen_grads = l2_penalty(params, config.l2)
            loss = mae + pen
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite AE loss at epoch {epoch}", epoch=epoch, model="ae")
            ae.backward(mae_grad(xb, rec))
            grads = [g + pg for g, pg in zip(ae.grads(), pen_grads)]
            adam_step(params, grads, opt)
            total += loss * len(xb)
            count += len(xb)
        val_mae = float(np.mean(_batch_mae(ae, x_va)))
        if not math.isfinite(val_mae):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", epoch=epoch, model="ae")
        report.train_loss.append(total / count)
        report.val_loss.append(val_mae)
        report.stopped_epoch = epoch
        logger.debug("epoch %d train %.6g val %.6g", epoch, total / count, val_mae)
        if val_mae < report.best_val_loss:
            report.best_val_loss = val_mae
            report.best_epoch = epoch
            best_flat = ae.get_flat()
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    ae.set_flat(best_flat)
    return report


def reconstruct(ae: AutoEncoder, window):
    """Return ``(reconstruction, mae)`` for one window."""
    x = as_windows(window, ae.window_len)
    if x.shape[0] != 1:
        raise DomainError("reconstruct takes a single window")
    rec = ae.forward(x)
    return rec[0, 0], float(np.mean(np.abs(x - rec)))


def score_ae(ae: AutoEncoder, windows):
    """Per-window reconstruction MAE, in input order."""
    x = as_windows(windows, ae.window_len)
    if len(x) == 0:
        return []
    return _batch_mae(ae, x).tolist()
