"""Layers with hand-written backward passes.

Every layer caches what it needs during ``forward`` and returns the
gradient with respect to its input from ``backward``; trainable layers
also fill ``grads`` (same keys as ``params``).  Arrays are NCHW for the
convolutional part and (batch, features) for dense layers.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def describe(self) -> dict:
        return {"type": type(self).__name__}

    def astype(self, dtype):
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        return self

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        # He-uniform
        bound = np.sqrt(6.0 / n_in)
        self.params["W"] = rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)
        self.zero_grad()

    def forward(self, x):
        self.x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        self.grads["W"] = self.x.T @ grad
        self.grads["b"] = grad.sum(axis=0)
        return grad @ self.params["W"].T

    def describe(self):
        return {"type": "Dense", "n_in": self.n_in, "n_out": self.n_out}


class Conv2d(Layer):
    """Square-kernel convolution via im2col, zero padding ``pad``."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, stride: int = 1, pad: int = 1,
                 rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in, self.c_out, self.k, self.stride, self.pad = c_in, c_out, kernel, stride, pad
        fan_in = c_in * kernel * kernel
        bound = np.sqrt(6.0 / fan_in)
        self.params["W"] = rng.uniform(-bound, bound, size=(c_out, c_in, kernel, kernel)).astype(dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)
        self.zero_grad()

    def _out_size(self, n):
        return (n + 2 * self.pad - self.k) // self.stride + 1

    def forward(self, x):
        b, c, h, w = x.shape
        if c != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {c}")
        k, s, p = self.k, self.stride, self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        ho, wo = win.shape[2], win.shape[3]
        # (B, Ho, Wo, C*k*k)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho, wo, c * k * k)
        self.cache = (x.shape, cols)
        wmat = self.params["W"].reshape(self.c_out, -1)
        out = cols @ wmat.T + self.params["b"]
        return out.transpose(0, 3, 1, 2)

    def backward(self, grad):
        shape, cols = self.cache
        b, c, h, w = shape
        k, s, p = self.k, self.stride, self.pad
        g = grad.transpose(0, 2, 3, 1)  # B, Ho, Wo, Cout
        ho, wo = g.shape[1], g.shape[2]
        wmat = self.params["W"].reshape(self.c_out, -1)
        self.grads["W"] = np.tensordot(g, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(self.params["W"].shape)
        self.grads["b"] = g.sum(axis=(0, 1, 2))
        dcols = (g @ wmat).reshape(b, ho, wo, c, k, k)
        dxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p : p + h, p : p + w]

    def describe(self):
        return {"type": "Conv2d", "c_in": self.c_in, "c_out": self.c_out, "kernel": self.k,
                "stride": self.stride, "pad": self.pad}


class ReLU(Layer):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return grad * self.mask


class Sigmoid(Layer):
    def forward(self, x):
        # split by sign to avoid overflow in exp
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self.out = out
        return out

    def backward(self, grad):
        return grad * self.out * (1.0 - self.out)


class Upsample(Layer):
    """Nearest-neighbour upsampling by an integer factor."""

    def __init__(self, factor: int = 2):
        super().__init__()
        self.factor = factor

    def forward(self, x):
        f = self.factor
        return x.repeat(f, axis=2).repeat(f, axis=3)

    def backward(self, grad):
        f = self.factor
        b, c, h, w = grad.shape
        return grad.reshape(b, c, h // f, f, w // f, f).sum(axis=(3, 5))

    def describe(self):
        return {"type": "Upsample", "factor": self.factor}


class Reshape(Layer):
    """Reshape the non-batch axes; ``shape=(-1,)`` flattens."""

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x):
        self.in_shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, grad):
        return grad.reshape(self.in_shape)

    def describe(self):
        return {"type": "Reshape", "shape": list(self.shape)}


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def describe(self) -> list:
        return [layer.describe() for layer in self.layers]

    def parameters(self):
        """Yield ``(key, layer, name)`` for every trainable array."""
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                yield f"{i}.{name}", layer, name

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self


def build_layer(desc: dict, dtype=np.float32) -> Layer:
    kind = desc["type"]
    if kind == "Dense":
        return Dense(desc["n_in"], desc["n_out"], dtype=dtype)
    if kind == "Conv2d":
        return Conv2d(desc["c_in"], desc["c_out"], desc["kernel"], desc["stride"], desc["pad"], dtype=dtype)
    if kind == "ReLU":
        return ReLU()
    if kind == "Sigmoid":
        return Sigmoid()
    if kind == "Upsample":
        return Upsample(desc["factor"])
    if kind == "Reshape":
        return Reshape(desc["shape"])
    raise ValueError(f"unknown layer type {kind!r}")
