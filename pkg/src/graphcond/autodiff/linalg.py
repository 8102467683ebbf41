from __future__ import annotations

import numpy as np

from .. import _kernels


def jacobi_eigh(s, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps run until the off-diagonal Frobenius norm drops below
    ``tol * max(1, ||S||_F)``. Returns eigenvalues in ascending order and the
    matching orthonormal eigenvectors as columns.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("jacobi_eigh needs a square matrix")
    scale = max(1.0, float(np.linalg.norm(s)))
    if np.max(np.abs(s - s.T), initial=0.0) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    s = 0.5 * (s + s.T)
    w, v, _, off = _kernels.jacobi_sweeps(s, tol * scale, max_sweeps)
    if off >= tol * scale:
        raise np.linalg.LinAlgError(f"Jacobi did not converge in {max_sweeps} sweeps (off={off:.3e})")
    order = np.argsort(w, kind="stable")
    return w[order], np.ascontiguousarray(v[:, order])
