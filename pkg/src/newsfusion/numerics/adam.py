"""Adam with bias correction.

Moments are kept in float64 keyed by parameter name; the updated value is
written back through the store (which quantizes to its float32 storage).
"""

from __future__ import annotations

import numpy as np

from .params import ParameterStore

__all__ = ["AdamState", "adam_step"]


class AdamState:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(store: ParameterStore, state: AdamState) -> None:
    """One update over every trainable parameter with a gradient.

    Iterates names in sorted order so the update sequence is deterministic.
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name in store.trainable_names():
        g = store.grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = np.zeros(g.shape, dtype=np.float64)
            state.m[name] = m
        v = state.v.get(name)
        if v is None:
            v = np.zeros(g.shape, dtype=np.float64)
            state.v[name] = v
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        new = store.value(name).astype(np.float64) - state.lr * mhat / (np.sqrt(vhat) + state.eps)
        store.set_value(name, new)
