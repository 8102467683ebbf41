"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The compiled path is used when numba imports cleanly and the environment
variable ``GRAPHCOND_DISABLE_NUMBA`` is unset (or ``0``). Both paths are always
importable so that tests and the benchmark can compare them directly.
"""
from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _numba_requested() -> bool:
    flag = os.environ.get("GRAPHCOND_DISABLE_NUMBA", "0").strip().lower()
    return flag in ("", "0", "false", "no")


HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _numba_requested()


# ---------------------------------------------------------------------------
# CSR sparse x dense product

def csr_spmm_numpy(indptr, indices, data, dense):
    n = indptr.shape[0] - 1
    dense = np.asarray(dense, dtype=np.float64)
    out = np.zeros((n, dense.shape[1]))
    if data.shape[0] == 0:
        return out
    rows = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(out, rows, data[:, None] * dense[indices])
    return out


def _csr_spmm_loop(indptr, indices, data, dense):
    n = indptr.shape[0] - 1
    m = dense.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            w = data[p]
            for c in range(m):
                out[i, c] += w * dense[j, c]
    return out


# ---------------------------------------------------------------------------
# Cyclic Jacobi eigenvalue sweeps

def _rotation(app, aqq, apq):
    # Numerically stable tangent of the rotation angle.
    theta = (aqq - app) / (2.0 * apq)
    if abs(theta) > 1e150:
        t = 0.5 / theta
    else:
        t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
        if theta < 0.0:
            t = -t
    c = 1.0 / math.sqrt(t * t + 1.0)
    return c, t * c


def _offdiag_norm(a):
    # summed directly; ||A||^2 - ||diag||^2 cancels catastrophically near convergence
    off = a * a
    np.fill_diagonal(off, 0.0)
    return float(np.sqrt(off.sum()))


def jacobi_numpy(a, tol, max_sweeps):
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    sweeps = 0
    off = _offdiag_norm(a)
    while off >= tol and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                c, s = _rotation(a[p, p], a[q, q], apq)
                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :]
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        sweeps += 1
        off = _offdiag_norm(a)
    return np.diag(a).copy(), v, sweeps, off


def _jacobi_loop(a_in, tol, max_sweeps):
    a = a_in.copy()
    n = a.shape[0]
    v = np.eye(n)
    sweeps = 0
    off = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                off += a[i, j] * a[i, j]
    off = np.sqrt(off)
    while off >= tol and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
        sweeps += 1
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        off = np.sqrt(off)
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, v, sweeps, off


# ---------------------------------------------------------------------------
# Greedy k-center

def kcenter_numpy(points, first, budget):
    sel = np.empty(budget, dtype=np.int64)
    sel[0] = first
    mins = np.sum((points - points[first]) ** 2, axis=1)
    # chosen points are pinned below zero so duplicates are never re-picked
    mins[first] = -1.0
    for i in range(1, budget):
        j = int(np.argmax(mins))
        sel[i] = j
        mins = np.minimum(mins, np.sum((points - points[j]) ** 2, axis=1))
        mins[j] = -1.0
    return sel


def _kcenter_loop(points, first, budget):
    m, h = points.shape
    sel = np.empty(budget, dtype=np.int64)
    sel[0] = first
    mins = np.empty(m)
    for r in range(m):
        acc = 0.0
        for c in range(h):
            d = points[r, c] - points[first, c]
            acc += d * d
        mins[r] = acc
    mins[first] = -1.0
    for i in range(1, budget):
        best = 0
        for r in range(1, m):
            if mins[r] > mins[best]:
                best = r
        sel[i] = best
        for r in range(m):
            acc = 0.0
            for c in range(h):
                d = points[r, c] - points[best, c]
                acc += d * d
            if acc < mins[r]:
                mins[r] = acc
        mins[best] = -1.0
    return sel


if HAVE_NUMBA:
    csr_spmm_numba = numba.njit(cache=True)(_csr_spmm_loop)
    jacobi_numba = numba.njit(cache=True)(_jacobi_loop)
    kcenter_numba = numba.njit(cache=True)(_kcenter_loop)
else:  # pragma: no cover
    csr_spmm_numba = jacobi_numba = kcenter_numba = None


def csr_spmm(indptr, indices, data, dense):
    """Row-compressed sparse matrix times dense matrix."""
    dense = np.ascontiguousarray(dense, dtype=np.float64)
    if USE_NUMBA:
        return csr_spmm_numba(indptr, indices, data, dense)
    return csr_spmm_numpy(indptr, indices, data, dense)


def jacobi_sweeps(a, tol=1e-12, max_sweeps=100):
    """Cyclic Jacobi on a symmetric matrix.

    Returns ``(diagonal, rotations, sweeps, off_norm)``; eigenvalues are not
    sorted here.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    if USE_NUMBA:
        return jacobi_numba(a, float(tol), int(max_sweeps))
    return jacobi_numpy(a, tol, max_sweeps)


def kcenter_greedy(points, first, budget):
    points = np.ascontiguousarray(points, dtype=np.float64)
    if USE_NUMBA:
        return kcenter_numba(points, int(first), int(budget))
    return kcenter_numpy(points, int(first), int(budget))
