from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, theta, **kw) -> "AdamState":
        return cls(np.zeros_like(theta, dtype=float), np.zeros_like(theta, dtype=float), **kw)


def adam_step(state: AdamState, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; moments in ``state`` are advanced in place."""
    if state.m.shape != np.shape(theta) or np.shape(grad) != np.shape(theta):
        raise ValueError("theta, grad and moments must share a shape")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = state.m / (1.0 - state.beta1**state.t)
    vhat = state.v / (1.0 - state.beta2**state.t)
    return theta - state.lr * mhat / (np.sqrt(vhat) + state.eps)
