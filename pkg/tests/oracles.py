"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import numpy as np

from nldetect.autoencoder import AEConfig, build_ae
from nldetect.gan import GANConfig, build_gan
from nldetect.neuralnet import (
    ConvLayerSpec,
    DenseLayerSpec,
    DropoutSpec,
    FlattenSpec,
    Network,
    PoolSpec,
    ReshapeSpec,
    gan_losses,
    l2_penalty,
    mae_loss,
)
from nldetect.neuralnet.losses import d_loss_grads, d_loss_logit_grads, g_loss_grad, g_loss_logit_grad, mae_grad


def pad_amounts(length, kernel, stride):
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return out, total // 2


def naive_conv(x, w, b, stride):
    """Nested-loop zero-padded 'same' cross-correlation; x (B, C, L), w (F, C, K)."""
    bsz, c_in, length = x.shape
    f_out, _, k = w.shape
    out, left = pad_amounts(length, k, stride)
    y = np.zeros((bsz, f_out, out))
    for bi in range(bsz):
        for f in range(f_out):
            for o in range(out):
                acc = 0.0 if b is None else b[f]
                for c in range(c_in):
                    for j in range(k):
                        pos = o * stride + j - left
                        if 0 <= pos < length:
                            acc += w[f, c, j] * x[bi, c, pos]
                y[bi, f, o] = acc
    return y


def naive_conv_transposed(u, w, b, stride):
    """Scatter form of the transposed convolution; u (B, F, Lin), w (F, C, K)."""
    bsz, f_in, lin = u.shape
    _, c_out, k = w.shape
    length = lin * stride
    _, left = pad_amounts(length, k, stride)
    y = np.zeros((bsz, c_out, length))
    for bi in range(bsz):
        for f in range(f_in):
            for o in range(lin):
                for c in range(c_out):
                    for j in range(k):
                        pos = o * stride + j - left
                        if 0 <= pos < length:
                            y[bi, c, pos] += w[f, c, j] * u[bi, f, o]
    if b is not None:
        y += np.asarray(b)[None, :, None]
    return y


def central_difference(fn, params, h_rel=1e-6):
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``params``,
    with step ``h = h_rel * max(1, |theta|)``."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            orig = p[i]
            h = h_rel * max(1.0, abs(orig))
            p[i] = orig + h
            up = fn()
            p[i] = orig - h
            down = fn()
            p[i] = orig
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(analytic, numeric):
    """Largest entrywise deviation relative to the gradient's magnitude."""
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-12)
    return float(np.max(np.abs(a - n)) / scale)


# --------------------------------------------------------------------------
# gradient-check configurations


def _network_case(specs, in_shape, seed, training=False):
    net = Network(specs, in_shape, seed=seed)
    gen = np.random.default_rng(seed + 1000)
    x = gen.standard_normal((2, *in_shape))
    up = gen.standard_normal((2, *net.output_shape))

    def loss():
        net.rng = np.random.default_rng(7)  # same dropout mask every call
        return float(np.sum(net.forward(x, training=training) * up))

    def analytic():
        net.rng = np.random.default_rng(7)
        net.forward(x, training=training)
        net.backward(up)
        return net.grads()

    return loss, analytic, net.params()


def _ae_case(seed):
    cfg = AEConfig([5, 3], [3, 2], [1, 2], [3, 5], [3, 1], [2, 2], latent=4, window_len=24, l2=1e-2)
    ae = build_ae(cfg, seed=seed)
    x = np.random.default_rng(seed).random((3, 1, 24))
    params = ae.params()

    def loss():
        return mae_loss(x, ae.forward(x)) + l2_penalty(params, cfg.l2)[0]

    def analytic():
        rec = ae.forward(x)
        ae.backward(mae_grad(x, rec))
        _, pen = l2_penalty(params, cfg.l2)
        return [g + p for g, p in zip(ae.grads(), pen)]

    return loss, analytic, params


def _tiny_gan(seed, non_saturating=False):
    cfg = GANConfig([3, 4], [3, 1], [2, 2], [4, 3], [3, 2], [2, 1], latent_dim=5, stem_frames=2,
                    dropout=0.0, window_len=16, non_saturating=non_saturating)
    return build_gan(cfg, seed=seed)


def _gan_d_case(seed, logits=False):
    gan = _tiny_gan(seed)
    gen = np.random.default_rng(seed)
    real = gen.random((3, 1, 16))
    fake = gan.generator.forward(gen.standard_normal((3, 5)))
    D = gan.discriminator

    def loss():
        out = D.forward(np.concatenate((real, fake)))[:, 0]
        return gan_losses(out[:3], out[3:])[0]

    def analytic():
        out = D.forward(np.concatenate((real, fake)))[:, 0]
        if logits:
            gr, gf = d_loss_logit_grads(D.logits[:3, 0], D.logits[3:, 0])
        else:
            gr, gf = d_loss_grads(out[:3], out[3:])
        D.backward(np.concatenate((gr, gf))[:, None], from_logits=logits)
        return D.grads()

    return loss, analytic, D.params()


def _gan_g_case(seed, non_saturating, logits=False):
    gan = _tiny_gan(seed, non_saturating)
    z = np.random.default_rng(seed).standard_normal((3, 5))
    G, D = gan.generator, gan.discriminator

    def loss():
        pf = D.forward(G.forward(z))[:, 0]
        return gan_losses(pf, pf, non_saturating=non_saturating)[1]

    def analytic():
        pf = D.forward(G.forward(z))[:, 0]
        if logits:
            g = g_loss_logit_grad(D.logits[:, 0], non_saturating=non_saturating)
        else:
            g = g_loss_grad(pf, non_saturating=non_saturating)
        G.backward(D.backward(g[:, None], from_logits=logits))
        return G.grads()

    return loss, analytic, G.params()


def gradcheck_cases():
    """``(name, loss, analytic, params)`` covering every layer type and the
    composite training losses."""
    cases = []
    for i, (k, f, s, act) in enumerate([(1, 2, 1, "linear"), (3, 3, 1, "leaky_relu"), (5, 2, 2, "sigmoid"),
                                        (4, 3, 3, "leaky_relu"), (6, 1, 2, "linear")]):
        cases.append((f"conv k{k} s{s} {act}", *_network_case([ConvLayerSpec(k, f, s, activation=act)],
                                                               (2, 11), seed=i)))
    for i, (k, f, s, act) in enumerate([(1, 2, 1, "linear"), (3, 2, 2, "leaky_relu"), (5, 3, 2, "sigmoid"),
                                        (4, 1, 3, "linear"), (2, 2, 2, "leaky_relu")]):
        spec = ConvLayerSpec(k, f, s, transposed=True, activation=act)
        cases.append((f"transposed conv k{k} s{s} {act}", *_network_case([spec], (2, 5), seed=10 + i)))
    for i, act in enumerate(("linear", "leaky_relu", "sigmoid")):
        cases.append((f"dense {act}", *_network_case([DenseLayerSpec(4, act)], (6,), seed=20 + i)))
    cases.append(("conv + maxpool 2", *_network_case([ConvLayerSpec(3, 2), PoolSpec(2)], (1, 10), seed=30)))
    cases.append(("conv + maxpool 3 partial block",
                  *_network_case([ConvLayerSpec(3, 2), PoolSpec(3)], (1, 10), seed=31)))
    cases.append(("conv + dropout (training)",
                  *_network_case([ConvLayerSpec(3, 2), DropoutSpec(0.4)], (1, 9), seed=32, training=True)))
    cases.append(("conv + flatten + dense",
                  *_network_case([ConvLayerSpec(3, 2, 2), FlattenSpec(), DenseLayerSpec(3, "sigmoid")],
                                 (1, 8), seed=33)))
    cases.append(("dense + reshape + transposed conv",
                  *_network_case([DenseLayerSpec(8), ReshapeSpec(2, 4), ConvLayerSpec(3, 1, 2, transposed=True)],
                                 (3,), seed=34)))
    for seed in (40, 41):
        cases.append((f"autoencoder MAE + L2 (seed {seed})", *_ae_case(seed)))
    cases.append(("GAN discriminator loss", *_gan_d_case(50)))
    cases.append(("GAN generator loss (saturating)", *_gan_g_case(51, False)))
    cases.append(("GAN generator loss (non-saturating)", *_gan_g_case(52, True)))
    cases.append(("GAN discriminator loss via logits", *_gan_d_case(53, logits=True)))
    cases.append(("GAN generator loss via logits (saturating)", *_gan_g_case(54, False, logits=True)))
    cases.append(("GAN generator loss via logits (non-saturating)", *_gan_g_case(55, True, logits=True)))
    return cases
