"""Adam with bias correction over named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import DomainError, TrainingError


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray | None],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """One Adam update, applied in ``params`` iteration order.

    Parameters whose gradient is ``None`` are skipped (frozen). Parameter
    arrays are replaced, never written in place, so earlier snapshots stay
    valid.
    """
    if lr < 0:
        raise DomainError(f"learning rate must be >= 0, got {lr}")
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m.astype(p.dtype, copy=False)
        state.v[name] = v.astype(p.dtype, copy=False)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
    return state
