"""Adam with weight decay, either decoupled (AdamW) or as an L2 term in the gradient."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # True: p <- p - lr*wd*p beside the Adam update (AdamW).
    # False: wd*p is added to the gradient before the moment updates (classic Adam L2).
    decoupled: bool = True
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Update ``params`` in place and return them.

    Parameters without a gradient entry (or with ``None``) are still decayed,
    matching an update with a zero gradient.
    """
    wd = state.weight_decay
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    bc1 = 1 - b1 ** t
    bc2 = 1 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        if wd and not state.decoupled:
            g = g + p.dtype.type(wd) * p
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if wd and state.decoupled:
            p -= p.dtype.type(state.lr * wd) * p
        p -= (state.lr * update).astype(p.dtype)
    return params
