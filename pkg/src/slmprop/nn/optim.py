"""Named parameter store with per-parameter AdamW state, and the cosine schedule."""

from __future__ import annotations

import math

import numpy as np

from ..errors import MissingGrad
from .autodiff import Tensor


class ParamStore:
    """Named map of trainable tensors plus AdamW moment buffers."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._step: dict[str, int] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(data, needs_grad=True)
        self.params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        self._step[name] = 0
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self):
        return list(self.params)

    def step_count(self, name: str) -> int:
        return self._step[name]

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Collected gradients; parameters untouched by backward get zeros."""
        return {
            k: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in self.params.items()
        }

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for k, t in self.params.items():
            other.add(k, t.data.copy())
            other._m[k] = self._m[k].copy()
            other._v[k] = self._v[k].copy()
            other._step[k] = self._step[k]
        return other

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}


def adamw_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float,
               betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.0, keys=None) -> None:
    """Decoupled-weight-decay Adam update on the named subset ``keys``.

    Defaults to every parameter in the store; raises :class:`MissingGrad`
    when a requested parameter has no gradient entry.
    """
    b1, b2 = betas
    if keys is None:
        keys = store.names()
    for k in keys:
        if k not in store.params:
            raise MissingGrad(f"unknown parameter {k!r}")
        if k not in grads:
            raise MissingGrad(f"no gradient supplied for {k!r}")
        g = grads[k]
        p = store.params[k]
        t = store._step[k] + 1
        store._step[k] = t
        m = store._m[k]
        v = store._v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Cosine annealing from lr0 at step 0 to 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
