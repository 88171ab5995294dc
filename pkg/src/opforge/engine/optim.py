"""Adam with bias correction, as a pure function over lists of arrays."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(params, grads, state):
    """Return ``(new_params, new_state)``; inputs are left untouched."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and moments must have the same length")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** step
    corr2 = 1.0 - b2 ** step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient passed to adam_step")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_p.append(p - state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, step, state.lr, b1, b2, state.eps)
