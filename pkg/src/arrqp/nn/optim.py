"""Adam and RMSProp with per-parameter state."""

from __future__ import annotations

import numpy as np

from .layers import Parameter


class Adam:
    def __init__(self, params: list[Parameter], learning_rate: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class RMSProp:
    def __init__(self, params: list[Parameter], learning_rate: float = 0.001,
                 rho: float = 0.9, eps: float = 1e-8):
        self.params = params
        self.lr = learning_rate
        self.rho = rho
        self.eps = eps
        self.sq = [np.zeros_like(p.value) for p in params]

    def step(self):
        for i, p in enumerate(self.params):
            g = p.grad
            self.sq[i] = self.rho * self.sq[i] + (1 - self.rho) * g * g
            p.value -= self.lr * g / (np.sqrt(self.sq[i]) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def make_optimizer(kind: str, params: list[Parameter], learning_rate: float):
    if kind == "adam":
        return Adam(params, learning_rate=learning_rate)
    if kind == "rmsprop":
        return RMSProp(params, learning_rate=learning_rate)
    raise ValueError(f"unknown optimizer {kind!r}")
