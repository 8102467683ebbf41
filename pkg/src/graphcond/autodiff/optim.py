from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """Moment buffers for one parameter list."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params) -> "AdamState":
        arrays = list(params.values()) if isinstance(params, dict) else list(params)
        return cls([np.zeros_like(p, dtype=np.float64) for p in arrays],
                   [np.zeros_like(p, dtype=np.float64) for p in arrays])


def adam_step(params, grads, state: AdamState, lr: float, weight_decay: float = 0.0):
    """One bias-corrected Adam update.

    Weight decay is folded into the gradient (``grad + wd * param``) before the
    moment updates. ``params``/``grads`` are parallel lists or dicts with the
    same keys; a new container of updated arrays is returned.
    """
    keys = list(params) if isinstance(params, dict) else None
    p_list = [params[k] for k in keys] if keys else list(params)
    g_list = [grads[k] for k in keys] if keys else list(grads)
    if not state.m:
        state.m = [np.zeros_like(p, dtype=np.float64) for p in p_list]
        state.v = [np.zeros_like(p, dtype=np.float64) for p in p_list]
    if len(state.m) != len(p_list):
        raise ValueError("optimizer state does not match parameter count")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = []
    for i, (p, g) in enumerate(zip(p_list, g_list)):
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ValueError(f"shape mismatch in Adam update: {p.shape} vs {g.shape}")
        if weight_decay:
            g = g + weight_decay * p
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        out.append(p - lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps))
    return dict(zip(keys, out)) if keys else out


class Adam:
    """Stateful convenience wrapper around :func:`adam_step`."""

    def __init__(self, lr: float, weight_decay: float = 0.0):
        self.lr = lr
        self.weight_decay = weight_decay
        self.state = AdamState()

    def step(self, params, grads):
        return adam_step(params, grads, self.state, self.lr, self.weight_decay)
