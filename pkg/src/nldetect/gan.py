"""Vanilla 1-D CNN GAN: generator, discriminator and alternating training."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .autoencoder import as_windows
from .errors import ConfigError, DivergenceError, DomainError
from .neuralnet import (
    ConvLayerSpec,
    DenseLayerSpec,
    DropoutSpec,
    FlattenSpec,
    Network,
    OptimizerState,
    ReshapeSpec,
    adam_step,
    gan_losses,
)
from .neuralnet.losses import d_loss_logit_grads, g_loss_logit_grad

logger = logging.getLogger(__name__)


@dataclass
class GANConfig:
    generator_kernels: list
    generator_filters: list
    generator_strides: list
    discriminator_kernels: list
    discriminator_filters: list
    discriminator_strides: list
    latent_dim: int = 64
    stem_frames: int = 8
    discriminator_dense: list = field(default_factory=list)  # hidden units before the sigmoid head
    dropout: float = 0.3
    lr_generator: float = 1e-3
    lr_discriminator: float = 1e-3
    batch_size: int = 32
    epochs: int = 1000
    window_len: int = 500
    non_saturating: bool = False
    dtype: str = "float64"  # compute precision; float32 trades exactness for speed

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be 'float32' or 'float64'", field="dtype")
        for prefix in ("generator", "discriminator"):
            lens = {len(getattr(self, f"{prefix}_{k}")) for k in ("kernels", "filters", "strides")}
            if len(lens) != 1 or 0 in lens:
                raise ConfigError(f"{prefix} kernels/filters/strides must be non-empty and equally long")
        if self.generator_filters[-1] != 1:
            raise ConfigError("the last generator layer must have 1 filter", field="generator_filters")
        if any(int(u) < 1 for u in self.discriminator_dense):
            raise ConfigError("discriminator_dense units must be >= 1", field="discriminator_dense")
        if self.latent_dim < 1 or self.stem_frames < 1:
            raise ConfigError("latent_dim and stem_frames must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout must lie in [0, 1)", field="dropout")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")

    @classmethod
    def from_dict(cls, d, **overrides):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown GAN keys {sorted(unknown)}")
        return cls(**{**d, **overrides})

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class GAN:
    def __init__(self, generator: Network, discriminator: Network, config: GANConfig):
        self.generator = generator
        self.discriminator = discriminator
        self.config = config

    def __iter__(self):
        return iter((self.generator, self.discriminator))

    @property
    def window_len(self):
        return self.discriminator.input_shape[1]


def generator_specs(config: GANConfig):
    up = int(np.prod(config.generator_strides))
    if config.window_len % up:
        raise ConfigError(
            f"window length {config.window_len} is not divisible by the generator upsampling {up}",
            field="generator_strides",
        )
    length = config.window_len // up
    specs = [DenseLayerSpec(config.stem_frames * length, "leaky_relu"), ReshapeSpec(config.stem_frames, length)]
    n = len(config.generator_kernels)
    for i, (k, f, s) in enumerate(zip(config.generator_kernels, config.generator_filters, config.generator_strides)):
        act = "sigmoid" if i == n - 1 else "leaky_relu"
        specs.append(ConvLayerSpec(kernel=k, filters=f, stride=s, transposed=True, activation=act))
    return specs


def discriminator_specs(config: GANConfig):
    specs = []
    for k, f, s in zip(config.discriminator_kernels, config.discriminator_filters, config.discriminator_strides):
        specs.append(ConvLayerSpec(kernel=k, filters=f, stride=s, activation="leaky_relu"))
        if config.dropout > 0:
            specs.append(DropoutSpec(config.dropout))
    specs.append(FlattenSpec())
    specs += [DenseLayerSpec(int(u), "leaky_relu") for u in config.discriminator_dense]
    specs.append(DenseLayerSpec(1, "sigmoid"))
    return specs


def build_gan(config: GANConfig, seed=0) -> GAN:
    ss = np.random.SeedSequence(seed)
    s_g, s_d = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    gen = Network(generator_specs(config), (config.latent_dim,), seed=s_g, name="generator", dtype=config.dtype)
    disc = Network(discriminator_specs(config), (1, config.window_len), seed=s_d, name="discriminator", dtype=config.dtype)
    if gen.output_shape != (1, config.window_len):
        raise ConfigError(f"generator output {gen.output_shape} != (1, {config.window_len})")
    return GAN(gen, disc, config)


def sample_latent(dim: int, seed, n=None):
    """Standard-normal latent vector (or ``(n, dim)`` batch)."""
    if dim < 1:
        raise DomainError("latent dimension must be >= 1")
    gen = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = (dim,) if n is None else (n, dim)
    return gen.standard_normal(shape)


def discriminator_step(gan: GAN, real, rng, opt: OptimizerState):
    """One discriminator update on a real batch and an equal-sized fake batch.

    The generator is only evaluated. Returns ``(d_loss, mean D(real), mean D(fake))``.
    """
    G, D = gan.generator, gan.discriminator
    b = len(real)
    fake = G.forward(sample_latent(gan.config.latent_dim, rng, b))
    out = D.forward(np.concatenate((real, fake)), training=True)[:, 0]
    pr, pf = out[:b], out[b:]
    d_loss, _ = gan_losses(pr, pf)
    if not math.isfinite(d_loss):
        return d_loss, float("nan"), float("nan")
    z = D.logits[:, 0]
    gr, gf = d_loss_logit_grads(z[:b], z[b:])
    D.backward(np.concatenate((gr, gf))[:, None], from_logits=True)
    adam_step(D.params(), D.grads(), opt)
    return d_loss, float(pr.mean()), float(pf.mean())


def generator_step(gan: GAN, batch_size: int, rng, opt: OptimizerState):
    """One generator update; the discriminator runs in inference mode and is not updated."""
    G, D = gan.generator, gan.discriminator
    fake = G.forward(sample_latent(gan.config.latent_dim, rng, batch_size), training=True)
    pf = D.forward(fake, training=False)[:, 0]
    _, g_loss = gan_losses(pf, pf, non_saturating=gan.config.non_saturating)
    if not math.isfinite(g_loss):
        return g_loss
    gz = g_loss_logit_grad(D.logits[:, 0], non_saturating=gan.config.non_saturating)
    gx = D.backward(gz[:, None], param_grads=False, from_logits=True)
    G.backward(gx)
    adam_step(G.params(), G.grads(), opt)
    return g_loss


def train_gan(gan: GAN, train, config: GANConfig | None = None, seed=0, epochs=None, callback=None):
    """Alternate one discriminator and one generator update per batch.

    Runs exactly ``epochs`` epochs (no early stopping). Returns a history
    dict of per-epoch means: ``d_loss``, ``g_loss``, ``d_real``, ``d_fake``,
    plus update counters.
    """
    config = config or gan.config
    epochs = config.epochs if epochs is None else epochs
    x = as_windows(train, gan.window_len)
    if len(x) == 0:
        raise DomainError("training set must be non-empty")
    rng = np.random.default_rng(seed)
    opt_d = OptimizerState(lr=config.lr_discriminator)
    opt_g = OptimizerState(lr=config.lr_generator)
    hist = {"d_loss": [], "g_loss": [], "d_real": [], "d_fake": [], "d_updates": 0, "g_updates": 0}
    bs = config.batch_size
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(len(x))
        acc = np.zeros(4)
        n_batches = 0
        for i in range(0, len(perm), bs):
            real = x[perm[i : i + bs]]
            d_loss, pr, pf = discriminator_step(gan, real, rng, opt_d)
            if not math.isfinite(d_loss):
                raise DivergenceError(f"non-finite discriminator loss at epoch {epoch}", epoch=epoch,
                                      model="discriminator")
            hist["d_updates"] += 1
            g_loss = generator_step(gan, len(real), rng, opt_g)
            if not math.isfinite(g_loss):
                raise DivergenceError(f"non-finite generator loss at epoch {epoch}", epoch=epoch,
                                      model="generator")
            hist["g_updates"] += 1
            acc += (d_loss, g_loss, pr, pf)
            n_batches += 1
        acc /= n_batches
        for key, val in zip(("d_loss", "g_loss", "d_real", "d_fake"), acc):
            hist[key].append(float(val))
        if epoch % 50 == 0 or epoch == epochs:
            logger.info("gan epoch %d: d_loss %.4f g_loss %.4f D(real) %.3f D(fake) %.3f", epoch, *acc)
        if callback is not None:
            callback(epoch, gan)
    return hist


def discriminate(D: Network, windows):
    """Discriminator probabilities (inference mode) for one window or a batch."""
    x = as_windows(windows, D.input_shape[1])
    out = D.forward(x, training=False)[:, 0]
    if np.ndim(windows) == 1 or (not isinstance(windows, np.ndarray) and hasattr(windows, "values")):
        return float(out[0])
    return out


def generate(G: Network, z):
    """Generated window(s) for latent vector(s) ``z``."""
    z = np.asarray(z, dtype=float)
    out = G.forward(np.atleast_2d(z))[:, 0, :]
    return out[0] if z.ndim == 1 else out
