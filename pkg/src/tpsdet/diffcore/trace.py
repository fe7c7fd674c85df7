"""Reverse-mode record of one training forward pass.

Layers push ``(inputs, output, backward)`` steps while running forward;
:meth:`Trace.backward` replays them in reverse, routing each output gradient
to the layer inputs and accumulating parameter gradients into the store.
Arrays are keyed by object identity, so the trace keeps them alive.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .store import ParameterStore

BackwardFn = Callable[[np.ndarray], tuple[Sequence, dict]]


class Trace:
    def __init__(self):
        self._steps: list[tuple[tuple, np.ndarray, BackwardFn]] = []

    def __len__(self) -> int:
        return len(self._steps)

    def push(self, inputs: Sequence[np.ndarray], output: np.ndarray, backward: BackwardFn) -> None:
        self._steps.append((tuple(inputs), output, backward))

    def backward(self, output: np.ndarray, dout: np.ndarray, store: ParameterStore, wrt: np.ndarray | None = None):
        """Propagate ``dout`` from ``output``; returns the gradient w.r.t. ``wrt`` if given."""
        pending = {id(output): dout}
        wrt_grad = None
        for inputs, out, backward in reversed(self._steps):
            g = pending.pop(id(out), None)
            if g is None:
                continue
            in_grads, param_grads = backward(g)
            for name, pg in param_grads.items():
                if pg is not None:
                    store.accumulate(name, pg)
            for inp, ig in zip(inputs, in_grads):
                if ig is None:
                    continue
                key = id(inp)
                pending[key] = pending[key] + ig if key in pending else ig
        if wrt is not None:
            wrt_grad = pending.get(id(wrt))
            if wrt_grad is None:
                wrt_grad = np.zeros_like(wrt)
        self._steps.clear()
        return wrt_grad
