"""Adam optimizer with a fused update kernel."""

from __future__ import annotations

import numpy as np

from signet import _backend
from signet.errors import DivergenceError


class AdamState:
    """Per-parameter first/second moment buffers plus the step counter."""

    def __init__(self, net, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step = 0
        self.m = [np.zeros_like(p.data) for p in net.parameters()]
        self.v = [np.zeros_like(p.data) for p in net.parameters()]

    def state_arrays(self):
        return self.m + self.v


def grad_norm(grads):
    return float(np.sqrt(sum(float(np.dot(g.reshape(-1), g.reshape(-1))) for g in grads)))


def adam_step(net, state: AdamState, lr, grads=None, clip=None):
    """Apply one Adam update in place; returns the (pre-clip) gradient norm.

    Non-finite gradients abort with DivergenceError so the caller can
    surface the step index.
    """
    params = net.parameters()
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in params]
    norm = grad_norm(grads)
    if not np.isfinite(norm):
        raise DivergenceError("non-finite gradient in adam_step")
    if clip is not None and norm > clip > 0.0:
        scale = clip / norm
        grads = [g * scale for g in grads]
    state.step += 1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        _backend.adam_update(p.data, g, m, v, lr, state.beta1, state.beta2,
                             state.eps, state.step)
    return norm
