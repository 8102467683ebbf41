"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeats 5]

The first numba call (JIT compilation) is excluded from the timings.
"""
import argparse
import timeit

import numpy as np

from graphcond import _kernels
from graphcond.graph import normalize_adjacency, sbm_generate


def _best(fn, repeats):
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    g = sbm_generate([1000] * 3, 0.02, 0.002, 64, 1.5, seed=0)
    op = normalize_adjacency(g, "sym")
    x = rng.standard_normal((g.n, 64))
    s = rng.standard_normal((96, 96))
    s = s + s.T
    pts = rng.standard_normal((3000, 32))

    cases = {
        f"spmm n={g.n} nnz={len(op.data)} h=64": (
            lambda: _kernels.csr_spmm_numpy(op.indptr, op.indices, op.data, x),
            lambda: _kernels.csr_spmm_numba(op.indptr, op.indices, op.data, x)),
        "jacobi 96x96": (
            lambda: _kernels.jacobi_numpy(s.copy(), 1e-12, 100),
            lambda: _kernels.jacobi_numba(s.copy(), 1e-12, 100)),
        "kcenter 3000x32 budget 100": (
            lambda: _kernels.kcenter_numpy(pts, 0, 100),
            lambda: _kernels.kcenter_numba(pts, 0, 100)),
    }
    print(f"{'kernel':34s} {'numpy (s)':>10s} {'numba (s)':>10s} {'speedup':>8s}")
    for name, (slow, fast) in cases.items():
        fast()  # compile
        t_np, t_nb = _best(slow, args.repeats), _best(fast, args.repeats)
        print(f"{name:34s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
