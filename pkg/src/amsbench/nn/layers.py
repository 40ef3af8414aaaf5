"""Dense building blocks with explicit forward/backward passes.

Layers cache what backward needs on the forward call; call ``backward`` once
per ``forward``. Gradients accumulate into ``Parameter.grad``.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Parameter:
    __slots__ = ("value", "grad", "m", "v", "step")

    def __init__(self, value):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.step = 0

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


class Module:
    """Minimal container: parameters are attributes of type Parameter or Module."""

    training = True

    def named_parameters(self, prefix: str = ""):
        for name, obj in self.__dict__.items():
            if isinstance(obj, Parameter):
                yield prefix + name, obj
            elif isinstance(obj, Module):
                yield from obj.named_parameters(f"{prefix}{name}.")
            elif isinstance(obj, (list, tuple)):
                for i, item in enumerate(obj):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def modules(self):
        yield self
        for obj in self.__dict__.values():
            if isinstance(obj, Module):
                yield from obj.modules()
            elif isinstance(obj, (list, tuple)):
                for item in obj:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)


def uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """y = x W + b over the last axis of x."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None, bias: bool = True):
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        self.W = Parameter(uniform(rng, n_in, (n_in, n_out)))
        self.b = Parameter(uniform(rng, n_in, (n_out,))) if bias else None
        self._x = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"linear: input shape {x.shape} does not match weight shape {self.W.shape}")
        self._x = x
        y = x @ self.W.value
        if self.b is not None:
            y = y + self.b.value
        return y

    def backward(self, dy):
        x = self._x
        x2 = x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        self.W.grad += x2.T @ dy2
        if self.b is not None:
            self.b.grad += dy2.sum(axis=0)
        return dy @ self.W.value.T


class ReLU(Module):
    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.dim, self.eps = dim, eps
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self._cache = None

    def forward(self, x):
        if x.shape[-1] != self.dim:
            raise ShapeError(f"layernorm: input shape {x.shape} does not match dim {self.dim}")
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc ** 2).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        self._cache = (xhat, inv)
        return xhat * self.gamma.value + self.beta.value

    def backward(self, dy):
        xhat, inv = self._cache
        D = self.dim
        self.gamma.grad += (dy * xhat).reshape(-1, D).sum(axis=0)
        self.beta.grad += dy.reshape(-1, D).sum(axis=0)
        dxhat = dy * self.gamma.value
        return inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))


class Dropout(Module):
    """Inverted dropout; identity in eval mode or when p == 0."""

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self._keep = None

    def forward(self, x, rng: np.random.Generator | None = None):
        if not self.training or self.p == 0.0:
            self._keep = None
            return x
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        self._keep = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._keep

    def backward(self, dy):
        return dy if self._keep is None else dy * self._keep


class Conv1d(Module):
    """Stride-1 'same' convolution over axis -2 of (N, L, C_in) inputs (channels last)."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, rng: np.random.Generator | None = None):
        if kernel < 1:
            raise ValueError("kernel width must be positive")
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out, self.k = c_in, c_out, kernel
        fan_in = c_in * kernel
        self.W = Parameter(uniform(rng, fan_in, (kernel, c_in, c_out)))
        self.b = Parameter(uniform(rng, fan_in, (c_out,)))
        self.pad_left = (kernel - 1) // 2
        self.pad_right = kernel - 1 - self.pad_left
        self._cols = None

    def _im2col(self, x):
        N, L, C = x.shape
        xp = np.pad(x, ((0, 0), (self.pad_left, self.pad_right), (0, 0)))
        # cols[n, l, j, c] = xp[n, l + j, c]
        return np.stack([xp[:, j:j + L] for j in range(self.k)], axis=2)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[-1] != self.c_in:
            raise ShapeError(f"conv1d: input shape {x.shape} does not match weight shape {self.W.shape}")
        if self.k > x.shape[1]:
            raise ShapeError(f"conv1d: kernel width {self.k} exceeds input length {x.shape[1]}")
        cols = self._im2col(x)
        self._cols = cols
        N, L = x.shape[:2]
        y = cols.reshape(N * L, -1) @ self.W.value.reshape(-1, self.c_out)
        return y.reshape(N, L, self.c_out) + self.b.value

    def backward(self, dy):
        cols = self._cols
        N, L, k, C = cols.shape
        dy2 = dy.reshape(N * L, self.c_out)
        self.W.grad += (cols.reshape(N * L, k * C).T @ dy2).reshape(self.W.shape)
        self.b.grad += dy2.sum(axis=0)
        dcols = (dy2 @ self.W.value.reshape(k * C, self.c_out).T).reshape(N, L, k, C)
        dxp = np.zeros((N, L + k - 1, C))
        for j in range(k):
            dxp[:, j:j + L] += dcols[:, :, j]
        return dxp[:, self.pad_left:self.pad_left + L]


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    return np.logaddexp(0.0, x)


def softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)
