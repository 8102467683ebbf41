"""Differentiable operations on :class:`Tensor`.

Every op accepts tensors or plain arrays (treated as constants) and records a
vector-Jacobian product on the tape of its tracked inputs.
"""
from __future__ import annotations

import numpy as np

from .core import Tensor, as_tensor, record, value_of


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_rank2(*xs):
    for x in xs:
        if x.ndim != 2:
            raise ValueError(f"expected a rank-2 tensor, got shape {x.shape}")


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_rank2(a, b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def vjp(g, needs):
        return (g @ bv.T if needs[0] else None, av.T @ g if needs[1] else None)

    return record(av @ bv, (a, b), vjp)


def spmm(sparse, x) -> Tensor:
    """Constant sparse (CSR) matrix times a dense tensor."""
    x = as_tensor(x)
    _check_rank2(x)
    if sparse.shape[1] != x.shape[0]:
        raise ValueError(f"spmm shape mismatch {sparse.shape} @ {x.shape}")

    def vjp(g, needs):
        return (sparse.transpose().dot(g),)

    return record(sparse.dot(x.value), (x,), vjp)


def transpose(x) -> Tensor:
    x = as_tensor(x)
    _check_rank2(x)
    return record(x.value.T, (x,), lambda g, needs: (g.T,))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return record(x.value.reshape(shape), (x,), lambda g, needs: (g.reshape(old),))


# -- elementwise arithmetic -----------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(g, b.shape) if needs[1] else None)

    return record(a.value + b.value, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(-g, b.shape) if needs[1] else None)

    return record(a.value - b.value, (a, b), vjp)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return record(-x.value, (x,), lambda g, needs: (-g,))


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return record(x.value * c, (x,), lambda g, needs: (g * c,))


def mul(a, b) -> Tensor:
    """Elementwise product with rank-2 broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def vjp(g, needs):
        return (_unbroadcast(g * bv, a.shape) if needs[0] else None,
                _unbroadcast(g * av, b.shape) if needs[1] else None)

    return record(av * bv, (a, b), vjp)


elementwise_mul = mul


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv

    def vjp(g, needs):
        return (_unbroadcast(g / bv, a.shape) if needs[0] else None,
                _unbroadcast(-g * out / bv, b.shape) if needs[1] else None)

    return record(out, (a, b), vjp)


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    xv = x.value
    return record(xv ** p, (x,), lambda g, needs: (g * p * xv ** (p - 1),))


def sqrt(x) -> Tensor:
    """Square root whose derivative at exactly zero is taken as zero."""
    x = as_tensor(x)
    out = np.sqrt(x.value)

    def vjp(g, needs):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return record(out, (x,), vjp)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.value)
    return record(out, (x,), lambda g, needs: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xv = x.value
    return record(np.log(xv), (x,), lambda g, needs: (g / xv,))


# -- activations ------------------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    return record(x.value * mask, (x,), lambda g, needs: (g * mask,))


def relu_mask(x) -> Tensor:
    """Constant 0/1 indicator of positive entries (derivative of relu)."""
    return Tensor((value_of(x) > 0).astype(np.float64))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    factor = np.where(x.value > 0, 1.0, slope)
    return record(x.value * factor, (x,), lambda g, needs: (g * factor,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return record(out, (x,), lambda g, needs: (g * out * (1.0 - out),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.value)
    return record(out, (x,), lambda g, needs: (g * (1.0 - out * out),))


def dropout(x, p: float, train_mode: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity outside training mode."""
    x = as_tensor(x)
    if not train_mode or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must lie in [0, 1)")
    rng = np.random.default_rng() if rng is None else rng
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return record(x.value * keep, (x,), lambda g, needs: (g * keep,))


def _softmax(v):
    z = v - v.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def row_softmax(x) -> Tensor:
    x = as_tensor(x)
    _check_rank2(x)
    s = _softmax(x.value)
    return record(s, (x,), lambda g, needs: (s * (g - np.sum(g * s, axis=1, keepdims=True)),))


def log_softmax(x) -> Tensor:
    x = as_tensor(x)
    _check_rank2(x)
    v = x.value
    z = v - v.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    s = np.exp(out)
    return record(out, (x,), lambda g, needs: (g - s * g.sum(axis=1, keepdims=True),))


def cross_entropy(logits, labels, mask=None, denom: float | None = None) -> Tensor:
    """Negative log-likelihood over the selected rows.

    ``mask`` is a boolean vector or an index array; the sum over selected rows is
    divided by ``denom`` (default: number of selected rows).
    """
    logits = as_tensor(logits)
    _check_rank2(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    if mask is None:
        idx = np.arange(n)
    else:
        mask = np.asarray(mask)
        idx = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if idx.size == 0:
        raise ValueError("cross_entropy over an empty node set")
    denom = float(len(idx)) if denom is None else float(denom)
    v = logits.value[idx]
    z = v - v.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    y = labels[idx]
    loss = np.sum(lse - z[np.arange(len(idx)), y]) / denom

    def vjp(g, needs):
        s = np.exp(z - lse[:, None])
        s[np.arange(len(idx)), y] -= 1.0
        out = np.zeros_like(logits.value)
        np.add.at(out, idx, s * (g / denom))
        return (out,)

    return record(loss, (logits,), vjp)


# -- reductions and structure ----------------------------------------------

def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape
    return record(np.sum(x.value), (x,), lambda g, needs: (np.broadcast_to(g, shape),))


def sum_axis(x, axis: int) -> Tensor:
    """Sum along ``axis`` keeping the reduced dimension."""
    x = as_tensor(x)
    shape = x.shape
    return record(x.value.sum(axis=axis, keepdims=True), (x,),
                  lambda g, needs: (np.broadcast_to(g, shape),))


def frobenius_sq(x) -> Tensor:
    x = as_tensor(x)
    xv = x.value
    return record(np.sum(xv * xv), (x,), lambda g, needs: (2.0 * g * xv,))


def concat_cols(xs) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    _check_rank2(*xs)
    widths = [x.shape[1] for x in xs]
    cuts = np.cumsum(widths)[:-1]

    def vjp(g, needs):
        return tuple(np.split(g, cuts, axis=1))

    return record(np.concatenate([x.value for x in xs], axis=1), tuple(xs), vjp)


def take_rows(x, index) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)
    shape = x.shape

    def vjp(g, needs):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return record(x.value[idx], (x,), vjp)


def mean_rows(x, index=None) -> Tensor:
    """Mean over a row subset as a 1 x h tensor."""
    x = as_tensor(x)
    _check_rank2(x)
    idx = np.arange(x.shape[0]) if index is None else np.asarray(index, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("mean over an empty row set")
    shape = x.shape

    def vjp(g, needs):
        out = np.zeros(shape)
        np.add.at(out, idx, np.broadcast_to(g / len(idx), (len(idx), shape[1])))
        return (out,)

    return record(x.value[idx].mean(axis=0, keepdims=True), (x,), vjp)


def pair_sum(p, q) -> Tensor:
    """Rows ``i*m + j`` hold ``p[i] + q[j]`` for ``p`` (n x h) and ``q`` (m x h)."""
    p, q = as_tensor(p), as_tensor(q)
    _check_rank2(p, q)
    n, m, h = p.shape[0], q.shape[0], p.shape[1]
    out = (p.value[:, None, :] + q.value[None, :, :]).reshape(n * m, h)

    def vjp(g, needs):
        g3 = g.reshape(n, m, h)
        return (g3.sum(axis=1) if needs[0] else None, g3.sum(axis=0) if needs[1] else None)

    return record(out, (p, q), vjp)


def cosine_columns_distance(a, b) -> Tensor:
    """Sum over columns of ``1 - cos(a_j, b_j)``.

    Rank-1 inputs count as one column. A column with a zero norm on exactly
    one side contributes 1 with zero gradient; a pair that is zero on both
    sides is identical and contributes 0.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    shape = a.shape
    av = a.value.reshape(-1, 1) if a.ndim < 2 else a.value
    bv = b.value.reshape(-1, 1) if b.ndim < 2 else b.value
    na = np.sqrt(np.sum(av * av, axis=0))
    nb = np.sqrt(np.sum(bv * bv, axis=0))
    ok = (na > 0) & (nb > 0)
    na_s, nb_s = np.where(ok, na, 1.0), np.where(ok, nb, 1.0)
    dot = np.sum(av * bv, axis=0)
    cos = np.where(ok, dot / (na_s * nb_s), 0.0)
    both_zero = (na == 0) & (nb == 0)
    loss = np.sum(np.where(both_zero, 0.0, 1.0 - cos))

    def vjp(g, needs):
        ga = gb = None
        if needs[0]:
            ga = -g * ok * (bv / (na_s * nb_s) - cos * av / na_s ** 2)
            ga = ga.reshape(shape)
        if needs[1]:
            gb = -g * ok * (av / (na_s * nb_s) - cos * bv / nb_s ** 2)
            gb = gb.reshape(shape)
        return ga, gb

    return record(loss, (a, b), vjp)


# -- operator overloads -----------------------------------------------------

Tensor.__add__ = lambda self, o: add(self, o)
Tensor.__radd__ = lambda self, o: add(o, self)
Tensor.__sub__ = lambda self, o: sub(self, o)
Tensor.__rsub__ = lambda self, o: sub(o, self)
Tensor.__mul__ = lambda self, o: mul(self, o)
Tensor.__rmul__ = lambda self, o: mul(o, self)
Tensor.__truediv__ = lambda self, o: div(self, o)
Tensor.__rtruediv__ = lambda self, o: div(o, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, o: matmul(self, o)
Tensor.__rmatmul__ = lambda self, o: matmul(o, self)
Tensor.__pow__ = lambda self, p: power(self, p)
Tensor.T = property(lambda self: transpose(self))
Tensor.sum = lambda self: sum(self)
