"""Adam and RMSprop written out as update rules.

Adam::

    m <- b1 m + (1 - b1) g
    v <- b2 v + (1 - b2) g^2
    w <- w - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)

RMSprop::

    v <- rho v + (1 - rho) g^2
    w <- w - lr * g / (sqrt(v) + eps)
"""

from __future__ import annotations

import numpy as np


class Optimizer:
    def __init__(self, lr: float):
        if not lr > 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.state = {}

    def step(self, params):
        """``params`` yields ``(key, layer, name)`` triples."""
        for key, layer, name in params:
            w = layer.params[name]
            layer.params[name] = self.update(key, w, layer.grads[name].astype(w.dtype, copy=False))

    def update(self, key, w, g):
        raise NotImplementedError


class Adam(Optimizer):
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def update(self, key, w, g):
        m, v, t = self.state.get(key, (np.zeros_like(w), np.zeros_like(w), 0))
        t += 1
        m = self.beta1 * m + (1 - self.beta1) * g
        v = self.beta2 * v + (1 - self.beta2) * g * g
        self.state[key] = (m, v, t)
        m_hat = m / (1 - self.beta1**t)
        v_hat = v / (1 - self.beta2**t)
        return (w - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(w.dtype, copy=False)


class RMSprop(Optimizer):
    def __init__(self, lr=1e-3, rho=0.9, eps=1e-7):
        super().__init__(lr)
        self.rho, self.eps = rho, eps

    def update(self, key, w, g):
        v = self.state.get(key, np.zeros_like(w))
        v = self.rho * v + (1 - self.rho) * g * g
        self.state[key] = v
        return (w - self.lr * g / (np.sqrt(v) + self.eps)).astype(w.dtype, copy=False)


def staged_rate(schedule, epoch: int) -> float:
    """Learning rate for ``epoch`` from ``[(n_epochs, lr), ...]`` stages."""
    end = 0
    for n, lr in schedule:
        end += n
        if epoch < end:
            return lr
    return schedule[-1][1]
