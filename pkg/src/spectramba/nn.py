"""Parameters, modules, seeded initialization and the Adam optimizer."""

from __future__ import annotations

import zlib
from collections import OrderedDict
from typing import Callable, Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor that knows how to (re)initialize itself.

    ``init`` receives ``(rng, shape)`` and returns an array.
    """

    def __init__(self, shape, init: Callable, dtype=np.float64):
        super().__init__(np.zeros(shape, dtype=dtype), requires_grad=True)
        self.init = init

    def reset(self, rng: np.random.Generator):
        self.data = np.ascontiguousarray(self.init(rng, self.shape), dtype=self.dtype)
        self.grad = np.zeros_like(self.data)


def uniform_fan_in(fan_in: int):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return lambda rng, shape: rng.uniform(-bound, bound, size=shape)


def zeros(rng, shape):
    return np.zeros(shape)


def ones(rng, shape):
    return np.ones(shape)


def constant(value):
    return lambda rng, shape: np.full(shape, value, dtype=float)


def eye(rng, shape):
    return np.eye(shape[0], shape[1])


def param_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named parameter.

    The stream depends only on ``seed`` and the parameter's dotted name, so
    adding or removing unrelated modules never shifts another module's init.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, zlib.crc32(name.encode())])))


class Module:
    """Container that registers parameters and submodules in attribute order."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            for i, m in enumerate(value):
                self._modules[f"{name}.{i}"] = m
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix="") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(np.sum([p.size for p in self.parameters()], dtype=np.int64))

    def initialize(self, seed: int, prefix=""):
        for name, p in self.named_parameters(prefix):
            p.reset(param_stream(seed, name))
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for n, p in own.items():
            arr = np.asarray(state[n])
            if arr.shape != p.shape:
                raise T.DimensionError(f"parameter {n}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """``y = x @ W + b`` with ``W`` stored as ``[in, out]``."""

    def __init__(self, n_in, n_out, bias=True, dtype=np.float64, weight_init=None, bias_init=None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.weight = Parameter((n_in, n_out), weight_init or uniform_fan_in(n_in), dtype)
        if bias:
            self.bias = Parameter((n_out,), bias_init or uniform_fan_in(n_in), dtype)
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise T.DimensionError(f"Linear: expected last dim {self.n_in}, got shape {x.shape}")
        y = T.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5, dtype=np.float64):
        super().__init__()
        self.eps = eps
        self.weight = Parameter((dim,), ones, dtype)
        self.bias = Parameter((dim,), zeros, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, axis=-1, eps=self.eps, weight=self.weight, bias=self.bias)


class Adam:
    """Adam with bias correction; ``eps`` is added outside the square root."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        if self.lr == 0:
            return
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(np.sum([np.sum(p.grad.astype(np.float64) ** 2) for p in params])))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad = p.grad * scale
    return total
