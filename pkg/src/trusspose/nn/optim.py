"""Adam optimizer (beta1=0.9, beta2=0.999, eps=1e-8)."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def init_adam_state(params) -> dict:
    return {
        "step": 0,
        "m": [np.zeros_like(np.asarray(p)) for p in params],
        "v": [np.zeros_like(np.asarray(p)) for p in params],
    }


def adam_step(params, grads, state, lr, beta1=BETA1, beta2=BETA2, eps=EPS):
    """One Adam update; mutates state, returns the updated parameter arrays."""
    state["step"] += 1
    t = state["step"]
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    updated = []
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        updated.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    return updated


class Adam:
    """Tensor-parameter convenience wrapper around adam_step."""

    def __init__(self, params: list[Tensor], lr=1e-3, beta1=BETA1, beta2=BETA2, eps=EPS):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = init_adam_state([p.data for p in self.params])

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [
            p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params
        ]
        new_values = adam_step(
            [p.data for p in self.params], grads, self.state,
            self.lr, self.beta1, self.beta2, self.eps,
        )
        for p, value in zip(self.params, new_values):
            p.data = value.astype(p.data.dtype, copy=False)
