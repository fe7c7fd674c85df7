"""Named parameter tensors, their gradients and Adam moments."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ..errors import ConfigError, StructuralError


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)


class ParameterStore:
    """Trainable tensors plus non-trainable buffers (batch-norm running statistics).

    Insertion order is preserved and defines the on-disk tensor order.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Param] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params or name in self.buffers:
            raise StructuralError(f"duplicate tensor name {name!r}")
        self.params[name] = Param(np.array(value, dtype=self.dtype))

    def add_buffer(self, name: str, value: np.ndarray) -> None:
        if name in self.params or name in self.buffers:
            raise StructuralError(f"duplicate tensor name {name!r}")
        self.buffers[name] = np.array(value, dtype=self.dtype)

    def __getitem__(self, name: str) -> np.ndarray:
        if name in self.params:
            return self.params[name].value
        return self.buffers[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params or name in self.buffers

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        p = self.params[name]
        p.grad += grad

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad.fill(0)

    def num_parameters(self) -> int:
        return int(sum(p.value.size for p in self.params.values()))

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """Every stored tensor (parameters first, then buffers)."""
        for name, p in self.params.items():
            yield name, p.value
        yield from self.buffers.items()

    def astype(self, dtype) -> "ParameterStore":
        """Deep copy with values cast to ``dtype``; optimizer state is reset."""
        out = ParameterStore(dtype)
        for name, p in self.params.items():
            out.add(name, p.value)
        for name, b in self.buffers.items():
            out.add_buffer(name, b)
        return out

    def copy(self) -> "ParameterStore":
        out = self.astype(self.dtype)
        for name, p in self.params.items():
            q = out.params[name]
            q.grad[...] = p.grad
            q.m[...] = p.m
            q.v[...] = p.v
        out.step = self.step
        return out


def adam_step(store: ParameterStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, t=None) -> ParameterStore:
    """Bias-corrected Adam update of every parameter, then zero the gradients.

    ``t`` is the 1-based step index; by default the store's own counter is
    advanced and used.
    """
    if t is None:
        t = store.step + 1
    if t < 1:
        raise ConfigError(f"Adam step index must be >= 1, got {t}")
    store.step = t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    dt = store.dtype.type
    for p in store.params.values():
        g = p.grad
        p.m *= dt(beta1)
        p.m += dt(1.0 - beta1) * g
        p.v *= dt(beta2)
        p.v += dt(1.0 - beta2) * g * g
        p.value -= dt(lr) * (p.m / dt(c1)) / (np.sqrt(p.v / dt(c2)) + dt(eps))
        g.fill(0)
    return store
