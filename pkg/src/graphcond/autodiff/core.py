from __future__ import annotations

import os

import numpy as np

DEBUG = os.environ.get("GRAPHCOND_DEBUG", "0") not in ("", "0")


class Tensor:
    """Rank <= 2 float64 array, optionally tracked on a :class:`Tape`."""

    __slots__ = ("value", "tape", "requires_grad", "name", "grad", "__weakref__")
    __array_priority__ = 100  # make ndarray (op) Tensor defer to Tensor

    def __init__(self, value, tape: "Tape | None" = None, requires_grad: bool = False, name=None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 2:
            raise ValueError(f"tensors are limited to rank 2, got shape {value.shape}")
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        kind = "param" if self.requires_grad and self.tape is not None else "const"
        return f"Tensor({kind}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


class Tape:
    """Ordered record of differentiable operations.

    Records are appended in execution order, which is a valid topological
    order. A tape supports exactly one backward pass.
    """

    def __init__(self):
        self.records: list = []
        self.leaves: list[Tensor] = []
        self.consumed = False

    def param(self, value, name=None) -> Tensor:
        t = Tensor(np.array(value, dtype=np.float64), tape=self, requires_grad=True, name=name)
        self.leaves.append(t)
        return t

    def const(self, value) -> Tensor:
        return Tensor(value)

    def backward(self, loss: Tensor) -> dict:
        return backward(self, loss)


def record(value, inputs, vjp) -> Tensor:
    """Wrap an op result, recording ``vjp`` when any input is tracked.

    ``vjp(g, needs)`` returns one gradient per input; entries for inputs whose
    ``needs`` flag is false may be ``None``.
    """
    value = np.asarray(value, dtype=np.float64)
    if DEBUG and not np.all(np.isfinite(value)):
        raise FloatingPointError("non-finite value produced")
    tape = None
    for t in inputs:
        if isinstance(t, Tensor) and t.requires_grad:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise ValueError("op mixes tensors from different tapes")
    if tape is None:
        return Tensor(value)
    if tape.consumed:
        raise RuntimeError("tape already used for backward")
    out = Tensor(value, tape=tape, requires_grad=True)
    needs = tuple(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    tape.records.append((out, inputs, needs, vjp))
    return out


def backward(tape: Tape, loss: Tensor) -> dict:
    """Reverse sweep; returns ``{leaf: gradient}`` for every trainable leaf.

    Leaves the loss does not depend on receive zero gradients.
    """
    if tape.consumed:
        raise RuntimeError("backward already ran on this tape")
    loss = as_tensor(loss)
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.requires_grad and loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.value)
    for out, inputs, needs, vjp in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi, need in zip(inputs, vjp(g, needs), needs):
            if not need or gi is None:
                continue
            key = id(t)
            gi = np.broadcast_to(gi, t.shape)
            grads[key] = gi + grads[key] if key in grads else np.array(gi)
    tape.consumed = True
    result = {}
    for leaf in tape.leaves:
        g = grads.get(id(leaf))
        leaf.grad = np.zeros_like(leaf.value) if g is None else g
        result[leaf] = leaf.grad
    return result
