"""Parameter containers and the small layer set the encoders are built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

INIT_STD = 0.02


class Module:
    """Registers Tensor parameters, numpy buffers and child modules by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = name
        object.__setattr__(self, name, np.asarray(value, dtype=np.float64))

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, "Module", str]]:
        """Yield (full name, owner, attribute) so callers can read and write buffers."""
        for name in self._buffers:
            yield prefix + name, self, name
        for name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None


def param(rng: np.random.Generator | None, shape, std: float = INIT_STD) -> Tensor:
    if rng is None or std == 0.0:
        data = np.zeros(shape)
    else:
        data = rng.normal(0.0, std, size=shape)
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None):
        super().__init__()
        self.w = param(rng, (d_in, d_out))
        self.b = param(None, (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.mul(T.layer_norm(x), self.gain), self.bias)


class BatchNorm(Module):
    """Batch normalization over axis 0 with running statistics for eval mode."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = T.LN_EPS):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(dim))
        self.register_buffer("running_var", np.ones(dim))

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            n = x.shape[0]
            normed = T.batch_norm(x, self.eps)
            m = self.momentum
            batch_var = x.data.var(axis=0) * n / (n - 1)
            self.running_mean = (1 - m) * self.running_mean + m * x.data.mean(axis=0)
            self.running_var = (1 - m) * self.running_var + m * batch_var
        else:
            shift = -self.running_mean
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            normed = T.mul(T.add(x, shift), inv)
        return T.add(T.mul(normed, self.gain), self.bias)
