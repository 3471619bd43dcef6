"""Parameterized layers on top of the autodiff ops."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Base class: parameters, buffers and child modules are discovered from attributes."""

    training = True

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        """Non-trainable state arrays (running statistics)."""
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if name == "state" and isinstance(value, dict):
                for k in sorted(value):
                    yield f"{full}.{k}", value, k
            elif isinstance(value, Module):
                yield from value.named_buffers(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, extra_in: int = 0,
                 extra_rng: np.random.Generator | None = None):
        """Dense layer; ``extra_in`` inputs get weights drawn from ``extra_rng``.

        Splitting the draws keeps the base weights identical to a layer built
        without the extra inputs from the same stream.
        """
        w = he_normal(rng, (n_out, n_in), n_in)
        if extra_in:
            w = np.concatenate([w, he_normal(extra_rng, (n_out, extra_in), n_in)], axis=1)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None, extra_in: int = 0, extra_rng: np.random.Generator | None = None):
        fan_in = c_in * kernel
        w = he_normal(rng, (c_out, c_in, kernel), fan_in)
        if extra_in:
            w = np.concatenate([w, he_normal(extra_rng, (c_out, extra_in, kernel), fan_in)], axis=1)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm1d(Module):
    """Batch normalization over (n, l) with optional learned per-channel affine."""

    def __init__(self, channels: int, affine: bool = True, eps: float = 1e-5, momentum: float = 0.1):
        self.state = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}
        self.eps = eps
        self.momentum = momentum
        if affine:
            self.gamma = Parameter(np.ones(channels))
            self.beta = Parameter(np.zeros(channels))
        self.affine = affine

    def __call__(self, x: Tensor) -> Tensor:
        y = T.batchnorm(x, self.training, self.state, self.eps, self.momentum)
        if self.affine:
            c = x.shape[1]
            y = T.add(T.mul(y, T.reshape(self.gamma, (1, c, 1))), T.reshape(self.beta, (1, c, 1)))
        return y
