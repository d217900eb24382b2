"""Time the compiled kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5] [--n 4096]

The numba variants are warmed up once before timing so compilation is not counted.
"""
import argparse
import math
import timeit

import numpy as np

from fracsemi import _kernels as K
from fracsemi.fem import FeSpace, Mesh, assemble
from fracsemi.linalg import BandedCholesky
from fracsemi.quadrature import quadrature_rule


def cases(n):
    space = FeSpace(Mesh.interval(n))
    M, A = assemble(space)
    dt = (1.0 / n) ** 2
    lhs = M.add(A, 1.0, 0.5 * dt)
    rhs = M.add(A, 1.0, -0.5 * dt)
    fac = BandedCholesky(lhs).factor
    ab = lhs.lower_band()
    x = np.sin(np.arange(lhs.n, dtype=float))
    beta = quadrature_rule(0.5, 1.5, dt, math.pi ** 2).beta[:2000]
    inv_diag = 1.0 / lhs.diagonal()
    lams = (np.arange(1, 4097) * math.pi) ** 2
    wq = quadrature_rule(0.5, 1.5, 1e-4, math.pi ** 2).beta
    lp = (lhs.indptr, lhs.indices, lhs.data)
    rp = (rhs.indptr, rhs.indices, rhs.data)
    return {
        "csr_matvec": lambda v: getattr(K, f"csr_matvec_{v}")(*lp, x),
        "banded_cholesky": lambda v: getattr(K, f"banded_cholesky_{v}")(ab),
        "banded_solve": lambda v: getattr(K, f"banded_solve_{v}")(fac, x),
        "pcg": lambda v: getattr(K, f"pcg_{v}")(*lp, x, np.zeros_like(x), inv_diag, 1e-10, 10 * lhs.n),
        "theta_sweep (2000 steps)": lambda v: getattr(K, f"theta_sweep_{v}")(fac, *rp, x, beta),
        "semigroup_quadrature": lambda v: getattr(K, f"semigroup_quadrature_{v}")(lams, wq, 1e-4),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=4096, help="cells of the 1D mesh")
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':28s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fn in cases(args.n).items():
        fn("numba")
        best = {}
        for variant in ("numba", "numpy"):
            t = timeit.repeat(lambda: fn(variant), number=1, repeat=args.repeat)
            best[variant] = 1e3 * min(t)
        print(f"{name:28s} {best['numba']:10.3f} {best['numpy']:10.3f} {best['numpy'] / best['numba']:8.1f}")


if __name__ == "__main__":
    main()
