"""Adam optimiser and the cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates and the shared step count."""

    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(m=[np.zeros(p.shape) for p in params], v=[np.zeros(p.shape) for p in params])

    def state_dict(self, prefix: str) -> Dict[str, np.ndarray]:
        out = {f"{prefix}step": np.array([float(self.step)])}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}m.{i}"] = m.copy()
            out[f"{prefix}v.{i}"] = v.copy()
        return out


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, mutating ``params`` and ``state`` in place.

    A missing gradient is treated as zero.
    """
    if len(state.m) != len(params):
        raise ConfigError(f"Adam state tracks {len(state.m)} parameters, got {len(params)}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros(p.shape)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class Adam:
    """Thin stateful wrapper around :func:`adam_step` for a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState.for_params(self.params)

    def step(self, lr: float) -> None:
        adam_step(
            self.params,
            [p.grad for p in self.params],
            self.state,
            lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def cosine_lr(step: int, total_steps: int, lr_max: float = 1e-3, lr_min: float = 1e-5) -> float:
    """Cosine decay from ``lr_max`` at step 0 to ``lr_min`` at ``total_steps``.

    Raises:
        ConfigError: if ``step`` lies outside [0, total_steps].
    """
    if step < 0 or step > total_steps:
        raise ConfigError(f"step {step} outside schedule range [0, {total_steps}]")
    if total_steps == 0:
        return lr_max
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def update_lr(update: int, updates: int, lr_max: float = 1e-3, lr_min: float = 1e-5) -> float:
    """Learning rate for update ``update`` of a run of ``updates`` optimiser steps.

    The first update runs at ``lr_max`` and the last at ``lr_min``.
    """
    return cosine_lr(update, max(updates - 1, 1), lr_max, lr_min)
