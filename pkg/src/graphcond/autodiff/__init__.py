"""Reverse-mode differentiation on dense float64 tensors."""
from . import ops
from .check import finite_diff_check
from .core import Tape, Tensor, as_tensor, backward, value_of
from .linalg import jacobi_eigh
from .optim import Adam, AdamState, adam_step
from .serialize import load_params, save_params

__all__ = [
    "Adam", "AdamState", "Tape", "Tensor", "adam_step", "as_tensor", "backward",
    "finite_diff_check", "jacobi_eigh", "load_params", "ops", "save_params", "value_of",
]
