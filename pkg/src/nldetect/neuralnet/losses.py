"""Scalar losses and their gradients."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import ContractError, DomainError

LOG_CLAMP = 1e-7


def mae_loss(x, x_rec):
    """Mean absolute error over all elements."""
    x = np.asarray(x, dtype=float)
    x_rec = np.asarray(x_rec, dtype=float)
    if x.shape != x_rec.shape:
        raise ContractError(f"shape mismatch {x.shape} vs {x_rec.shape}")
    return float(np.mean(np.abs(x - x_rec)))


def mae_grad(x, x_rec):
    """Gradient of :func:`mae_loss` with respect to ``x_rec``."""
    return np.sign(x_rec - x) / x.size


def l2_penalty(params, lam):
    """Return ``(lam * sum ||p||^2, [2 lam p for p in params])``."""
    if lam < 0:
        raise DomainError("regularisation coefficient must be >= 0")
    params = [np.asarray(p, dtype=float) for p in params]
    value = lam * float(sum(np.sum(p * p) for p in params))
    return value, [2.0 * lam * p for p in params]


def _clamp(p, eps):
    return np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps)


def gan_losses(d_real, d_fake, eps=LOG_CLAMP, non_saturating=False):
    """Discriminator and generator losses from discriminator outputs.

    The discriminator minimises ``-(mean log D(x) + mean log(1 - D(G(z))))``.
    The generator minimises ``mean log(1 - D(G(z)))``, or
    ``-mean log D(G(z))`` when ``non_saturating`` is set. Outputs are clamped
    to ``[eps, 1 - eps]`` before taking logs.
    """
    pr = _clamp(d_real, eps)
    pf = _clamp(d_fake, eps)
    d_loss = -(np.mean(np.log(pr)) + np.mean(np.log1p(-pf)))
    if non_saturating:
        g_loss = -np.mean(np.log(pf))
    else:
        g_loss = np.mean(np.log1p(-pf))
    return float(d_loss), float(g_loss)


def _inside(p, eps):
    p = np.asarray(p, dtype=float)
    return (p > eps) & (p < 1.0 - eps)


def d_loss_grads(d_real, d_fake, eps=LOG_CLAMP):
    """Gradients of the discriminator loss w.r.t. real and fake outputs."""
    pr = _clamp(d_real, eps)
    pf = _clamp(d_fake, eps)
    gr = np.where(_inside(d_real, eps), -1.0 / pr, 0.0) / pr.size
    gf = np.where(_inside(d_fake, eps), 1.0 / (1.0 - pf), 0.0) / pf.size
    return gr, gf


def g_loss_grad(d_fake, eps=LOG_CLAMP, non_saturating=False):
    """Gradient of the generator loss w.r.t. the fake outputs."""
    pf = _clamp(d_fake, eps)
    if non_saturating:
        g = -1.0 / pf
    else:
        g = -1.0 / (1.0 - pf)
    return np.where(_inside(d_fake, eps), g, 0.0) / pf.size


def d_loss_logit_grads(z_real, z_fake):
    """Gradients of the unclamped discriminator loss w.r.t. the sigmoid logits.

    ``d/dz [-log sigmoid(z)] = sigmoid(z) - 1`` and
    ``d/dz [-log(1 - sigmoid(z))] = sigmoid(z)``; neither vanishes when the
    output saturates, unlike the chain through the sigmoid derivative.
    """
    z_real = np.asarray(z_real, dtype=float)
    z_fake = np.asarray(z_fake, dtype=float)
    return -expit(-z_real) / z_real.size, expit(z_fake) / z_fake.size


def g_loss_logit_grad(z_fake, non_saturating=False):
    """Gradient of the unclamped generator loss w.r.t. the sigmoid logits."""
    z_fake = np.asarray(z_fake, dtype=float)
    if non_saturating:
        return -expit(-z_fake) / z_fake.size
    return -expit(z_fake) / z_fake.size
