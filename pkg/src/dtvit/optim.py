"""AdamW with decoupled weight decay."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimState:
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be >= 0 and eps > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")

    def hyper(self) -> dict:
        return {k: getattr(self, k) for k in ("lr", "beta1", "beta2", "eps", "weight_decay", "t")}


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimState,
    lr: float | None = None,
) -> dict[str, np.ndarray]:
    """One AdamW update; returns new parameter arrays and advances ``state``.

    Decay is applied as ``w * (1 - lr * wd)`` before the Adam step, which is
    algebraically ``w - lr * (m_hat / (sqrt(v_hat) + eps) + wd * w)`` and makes
    a zero-gradient step an exact multiplicative shrink.
    """
    lr = state.lr if lr is None else lr
    for name, w in params.items():
        g = grads.get(name)
        if g is not None and np.shape(g) != np.shape(w):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {name} {np.shape(w)}")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    out = {}
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(w)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(w)
            v = np.zeros_like(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        state.m[name] = m.astype(w.dtype, copy=False)
        state.v[name] = v.astype(w.dtype, copy=False)
        m_hat = m / c1
        v_hat = v / c2
        new = w * (1.0 - lr * state.weight_decay)
        new = new - lr * (m_hat / (np.sqrt(v_hat) + state.eps))
        out[name] = new.astype(w.dtype, copy=False)
    return out


def cosine_lr(base_lr: float, step: int, total_steps: int, min_lr: float = 0.0) -> float:
    if total_steps <= 1:
        return base_lr
    frac = min(step, total_steps - 1) / (total_steps - 1)
    return min_lr + 0.5 * (base_lr - min_lr) * (1 + math.cos(math.pi * frac))
