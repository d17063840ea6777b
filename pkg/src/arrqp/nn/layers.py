"""Layers with hand-written forward/backward passes.

Everything runs in float64.  Layers cache what they need during forward and
accumulate parameter gradients during backward, so call ``zero_grad`` (or a
fresh optimizer step) between batches.
"""

from __future__ import annotations

import numpy as np


class Parameter:
    """A trainable array plus its accumulated gradient."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name: str = ""):
        self.value = np.asarray(value, dtype=float)
        self.grad = np.zeros_like(self.value)
        self.name = name

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name or 'unnamed'}, shape={self.value.shape})"


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_in, fan_out))


# elementwise nonlinearities; *_grad takes the pre-activation input

def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    return (x > 0).astype(float)


def leaky_relu(x, slope: float = 0.2):
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x, slope: float = 0.2):
    return np.where(x > 0, 1.0, slope)


def sigmoid(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(x):
    s = sigmoid(x)
    return s * (1.0 - s)


_ACTIVATIONS = {
    "relu": (relu, relu_grad),
    "leaky_relu": (leaky_relu, leaky_relu_grad),
    "sigmoid": (sigmoid, sigmoid_grad),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "linear": (lambda x: x, lambda x: np.ones_like(x)),
}


def activation_pair(name: str):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


class Dense:
    """Affine map y = x @ W + b with optional activation."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 activation: str = "linear", init: str = "glorot", name: str = "dense"):
        if init == "glorot":
            w = glorot_uniform(rng, in_dim, out_dim)
        elif init == "identity":
            if in_dim != out_dim:
                raise ValueError("identity init needs a square weight matrix")
            w = np.eye(in_dim)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.w = Parameter(w, f"{name}.w")
        self.b = Parameter(np.zeros(out_dim), f"{name}.b")
        self.activation = activation
        self._act, self._act_grad = activation_pair(activation)
        self._x = None
        self._pre = None

    def params(self) -> list[Parameter]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.w.value.shape[0]:
            raise ValueError(
                f"input width {x.shape[-1]} does not match weight shape {self.w.value.shape}"
            )
        self._x = x
        self._pre = x @ self.w.value + self.b.value
        return self._act(self._pre)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dpre = dout * self._act_grad(self._pre)
        self.w.grad += self._x.T @ dpre
        self.b.grad += dpre.sum(axis=0)
        return dpre @ self.w.value.T


class Conv1x1:
    """Single 1x1 filter over C stacked feature maps.

    Input is a (C, N, D) stack; the output at every position is the learned
    weighted sum over channels plus a bias, i.e. sum_c w_c * X_c + b.
    """

    def __init__(self, n_channels: int, rng: np.random.Generator, name: str = "conv1x1"):
        w = glorot_uniform(rng, n_channels, 1, shape=(n_channels,))
        self.w = Parameter(w, f"{name}.w")
        self.b = Parameter(np.zeros(()), f"{name}.b")
        self._stack = None

    def params(self) -> list[Parameter]:
        return [self.w, self.b]

    def forward(self, stack: np.ndarray) -> np.ndarray:
        if stack.ndim != 3 or stack.shape[0] != self.w.value.size:
            raise ValueError(
                f"expected ({self.w.value.size}, N, D) stack, got {stack.shape}"
            )
        self._stack = stack
        return np.tensordot(self.w.value, stack, axes=(0, 0)) + self.b.value

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.w.grad += np.tensordot(self._stack, dout, axes=([1, 2], [0, 1]))
        self.b.grad += dout.sum()
        return self.w.value[:, None, None] * dout[None, :, :]


class Dropout:
    """Inverted dropout; identity at rate 0 and always at evaluation time."""

    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return dout
        return dout * self._mask
