from __future__ import annotations

import numpy as np

from .core import Tape, Tensor


def finite_diff_check(f, x, eps: float = 1e-4) -> float:
    """Largest deviation between backward and central-difference gradients.

    ``x`` is an array or a list of arrays; ``f`` receives the matching
    tensor(s) and returns a scalar tensor. The deviation is scaled by the
    largest gradient magnitude seen on either route, so it reads as a relative
    error and is exactly 0 when both gradients vanish.
    """
    multi = isinstance(x, (list, tuple))
    xs = [np.array(a, dtype=np.float64) for a in (x if multi else [x])]

    tape = Tape()
    leaves = [tape.param(a) for a in xs]
    loss = f(leaves if multi else leaves[0])
    grads = tape.backward(loss)
    analytic = [grads[leaf] for leaf in leaves]

    def evaluate(arrays):
        ts = [Tensor(a) for a in arrays]
        out = f(ts if multi else ts[0])
        return float(out.value if isinstance(out, Tensor) else out)

    numeric = []
    for k, a in enumerate(xs):
        g = np.zeros_like(a)
        flat = g.reshape(-1)
        for i in range(a.size):
            plus = [b.copy() for b in xs]
            minus = [b.copy() for b in xs]
            plus[k].reshape(-1)[i] += eps
            minus[k].reshape(-1)[i] -= eps
            flat[i] = (evaluate(plus) - evaluate(minus)) / (2.0 * eps)
        numeric.append(g)

    err = max((np.max(np.abs(a - n), initial=0.0) for a, n in zip(analytic, numeric)), default=0.0)
    scale = max((max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0))
                 for a, n in zip(analytic, numeric)), default=0.0)
    if scale == 0.0:
        return 0.0
    return float(err / scale)
