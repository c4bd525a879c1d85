"""Adam with bias correction and the Noam warm-up schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, state: OptimizerState, lr: float, beta1=0.9, beta2=0.98, eps=1e-9):
    """One in-place Adam update of every parameter holding a gradient.

    ``params`` is an iterable of named ``Parameter``s; moments are keyed by name.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in params:
        if p.grad is None:
            continue
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)
    return state


def noam_lr(step: int, warmup: int = 1600, d_model: int = 128, peak_lr: float = 1e-4) -> float:
    """Noam schedule scaled so the peak (reached at ``step == warmup``) is ``peak_lr``."""
    if step < 1:
        raise ArgumentError("noam_lr is defined for step >= 1")
    if warmup < 1:
        raise ArgumentError("warmup must be >= 1")
    scale = peak_lr * math.sqrt(d_model) * math.sqrt(warmup)
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)
