"""Adam update with bias correction."""

from __future__ import annotations

import numpy as np


class NumericError(ValueError):
    pass


class AdamState:
    """Per-parameter first/second moment accumulators and step counter."""

    def __init__(self, shape, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(state: AdamState, grad, lr: float):
    """Advance `state` by one step and return the parameter delta.

    m <- b1*m + (1-b1)*g, v <- b2*v + (1-b2)*g^2, with bias-corrected
    m_hat, v_hat and delta = -lr * m_hat / (sqrt(v_hat) + eps).
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.m.shape:
        raise NumericError(f"gradient shape {grad.shape} != state shape {state.m.shape}")
    if lr <= 0:
        raise NumericError("learning rate must be positive")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient passed to adam_step")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return -lr * m_hat / (np.sqrt(v_hat) + state.eps)
