"""Adaptive-moment gradient descent on a named parameter dict.

Per parameter p with gradient g and step count t:

    m <- b1*m + (1-b1)*g          v <- b2*v + (1-b2)*g*g
    p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)

Updates happen in place on the arrays handed in, in sorted key order, so a
run is deterministic given the gradient sequence.
"""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(v) for k, v in params.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k in sorted(self.params):
            g = grads[k]
            m = self._m[k]
            v = self._v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            self.params[k] -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def snapshot(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def restore(self, snap: dict):
        for k, v in self.params.items():
            v[...] = snap[k]
