"""Nadam (Nesterov-accelerated Adam) in Dozat's form, with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hct.errors import ConfigError, ContractError


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        # beta1 = 0 is allowed: it degenerates to bias-corrected RMSProp
        if not 0 <= self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ConfigError(f"betas out of range: {self.beta1}, {self.beta2}")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


def nadam_step(params, grads, state: OptimizerState):
    """One Nadam update; returns ``(new_params, state)``.

    ``params`` and ``grads`` are mappings of name to array with matching keys
    and shapes. The step counter is advanced before the bias corrections.
    """
    if set(params) != set(grads):
        raise ContractError("gradient names do not match parameter names")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    corr1 = 1 - b1 ** t
    corr2 = 1 - b2 ** t
    updated = {}
    for name, theta in params.items():
        g = np.asarray(grads[name])
        if g.shape != np.shape(theta):
            raise ContractError(f"gradient shape {g.shape} != parameter {np.shape(theta)} for {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(theta)
            v = np.zeros_like(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / corr1
        v_hat = v / corr2
        step = (b1 * m_hat + (1 - b1) * g / corr1) / (np.sqrt(v_hat) + state.eps)
        updated[name] = (theta - state.lr * step).astype(np.asarray(theta).dtype, copy=False)
        state.m[name] = m
        state.v[name] = v
    return updated, state
