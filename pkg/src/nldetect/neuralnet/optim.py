"""ADAM optimiser."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, DomainError


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise DomainError("beta1 and beta2 must lie in (0, 1)")
        if self.lr < 0:
            raise DomainError("learning rate must be >= 0")


def adam_step(params, grads, state: OptimizerState):
    """Update ``params`` in place and return them.

    ``state.step`` is incremented before bias correction, so the first call
    uses ``step = 1``.
    """
    if len(params) != len(grads):
        raise ContractError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ContractError(f"param shape {p.shape} != grad shape {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        p -= state.lr / (np.sqrt(v_hat) + state.eps) * m_hat
    return params
