"""Fast property checks runnable from an installed package (``fracsemi selftest``)."""
import math

import numpy as np

from .fem import FeSpace, HeatState, Mesh, assemble, p1_dirichlet_eigenvalues, theta_step
from .linalg import CgConfig, CsrMatrix, cg_solve, spmv
from .quadrature import QuadratureSpec, RegularityMode, admissible_r, compute_weights
from .spectral import DIRICHLET, interval_eigenpairs, project, semigroup_apply


def random_spec(rng):
    s = float(rng.uniform(0.02, 0.98))
    lo, hi = admissible_r(s)
    r = float(rng.uniform(lo + 1e-9, hi))
    dt = float(10.0 ** rng.uniform(-4, -0.5))
    n_t = int(rng.integers(1, 400))
    return QuadratureSpec(s, r, dt, n_t)


def expected_total(spec):
    s, T, dt = spec.s, spec.T, spec.dt
    if spec.mode is RegularityMode.NEGATIVE_ORDER:
        return (T ** s - dt ** s) / s
    return T ** s / s


def check_weights(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    worst_neg = 0.0
    worst_sum = 0.0
    for _ in range(n):
        spec = random_spec(rng)
        w = compute_weights(spec)
        worst_neg = min(worst_neg, float(w.beta.min()))
        worst_sum = max(worst_sum, abs(w.total - expected_total(spec)) / expected_total(spec))
    return worst_neg >= 0.0 and worst_sum <= 1e-12, f"min beta {worst_neg:.3g}, max sum error {worst_sum:.3g}"


def check_semigroup(seed=0):
    basis = interval_eigenpairs(1.0, DIRICHLET, 64)
    u = project(lambda x: x * (1.0 - x) ** 2, basis)
    a = semigroup_apply(semigroup_apply(u, 0.013), 0.021).coeffs
    b = semigroup_apply(u, 0.034).coeffs
    err = float(np.max(np.abs(a - b)) / np.max(np.abs(b)))
    return err <= 1e-12, f"relative composition error {err:.3g}"


def check_cg(seed=0, n=50):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((n, n))
    a = CsrMatrix.from_dense(q @ q.T + n * np.eye(n))
    b = rng.standard_normal(n)
    res = cg_solve(a, b, CgConfig(rel_tol=1e-10))
    true = float(np.linalg.norm(b - spmv(a, res.x)) / np.linalg.norm(b))
    return true <= 1e-10, f"{res.iterations} iterations, residual {true:.3g}"


def check_crank_nicolson(n=32, t_end=0.05):
    space = FeSpace(Mesh.interval(n), 1, DIRICHLET)
    M, A = assemble(space)
    mu = p1_dirichlet_eigenvalues(n)[0]
    w0 = np.sin(math.pi * space.coords[space.free])
    errs = []
    dts = [t_end / m for m in (8, 16, 32, 64)]
    for dt in dts:
        st = HeatState.start(M, A, 0.5, dt, w0)
        for _ in range(round(t_end / dt)):
            st = theta_step(st)
        errs.append(np.linalg.norm(st.W - math.exp(-mu * t_end) * w0))
    order = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
    return abs(order - 2.0) <= 0.1, f"time order {order:.3f}"


CHECKS = {
    "weights": check_weights,
    "semigroup": check_semigroup,
    "cg": check_cg,
    "crank_nicolson": check_crank_nicolson,
}


def run_all(echo=print):
    ok = True
    for name, fn in CHECKS.items():
        passed, detail = fn()
        ok &= passed
        echo(f"{'PASS' if passed else 'FAIL'}  {name:16s} {detail}")
    return ok
