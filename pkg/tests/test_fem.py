import math

import numpy as np
import pytest

from fracsemi.errors import CflError, DomainError, UsageError
from fracsemi.fem import (FeSpace, HeatState, Mesh, assemble, assemble_full, cfl_check, dst_fractional_power,
                          evaluate, generalized_lambda_max, l2_error, l2_project, load_vector, mass_norm,
                          p1_dirichlet_eigenvalues, prolong, theta_step)
from fracsemi.linalg import CsrMatrix, spmv
from fracsemi.spectral import DIRICHLET, NEUMANN, robin


def space1d(n, k=1, bc=DIRICHLET, length=1.0):
    return FeSpace(Mesh.interval(n, length), k, bc)


def sine_vector(space, m):
    return np.sin(m * math.pi * space.coords[space.free])


def rate(errors, hs):
    return np.polyfit(np.log(hs), np.log(errors), 1)[0]


def test_mesh_validation():
    assert Mesh.from_h(0.25).n == 4
    with pytest.raises(DomainError):
        Mesh.from_h(0.3)
    with pytest.raises(DomainError):
        Mesh(3, 4)
    with pytest.raises(DomainError):
        Mesh(2, 4, 2.0)
    assert Mesh.unit_square(3).triangles().shape == (18, 3)


def test_dirichlet_p1_matrices():
    M, A = assemble(space1d(4))
    d = A.to_dense()
    np.testing.assert_allclose(np.diag(d), 8.0)
    np.testing.assert_allclose(np.diag(d, 1), -4.0)
    np.testing.assert_allclose(np.diag(M.to_dense()), 2 * 0.25 / 3)
    np.testing.assert_allclose(np.diag(M.to_dense(), 1), 0.25 / 6)
    assert d.shape == (3, 3)


def test_neumann_stiffness_annihilates_constants():
    for sp in (space1d(7, 1, NEUMANN), space1d(5, 2, NEUMANN), FeSpace(Mesh.unit_square(4), 1, NEUMANN)):
        _, A = assemble(sp)
        np.testing.assert_allclose(spmv(A, np.ones(A.n)), 0.0, atol=1e-12)


def test_robin_boundary_term():
    h = 0.1
    _, A = assemble(space1d(10, 1, robin(1.0)))
    assert A.to_dense()[0, 0] == pytest.approx(1 / h + 1)
    assert A.to_dense()[-1, -1] == pytest.approx(1 / h + 1)
    _, A = assemble(FeSpace(Mesh.unit_square(4), 1, robin(2.0)))
    # corner node sees half of each adjacent boundary edge: Robin mass 2·κ·h/3
    _, A0 = assemble(FeSpace(Mesh.unit_square(4), 1, NEUMANN))
    assert A.to_dense()[0, 0] - A0.to_dense()[0, 0] == pytest.approx(2 * 2.0 * 0.25 / 3)


@pytest.mark.parametrize("sp", [space1d(9), space1d(6, 2, robin(3.0)), FeSpace(Mesh.unit_square(5)),
                                FeSpace(Mesh.unit_square(4), 1, NEUMANN)])
def test_symmetric_and_definite(sp):
    M, A = assemble(sp)
    assert M.asymmetry() < 1e-14 and A.asymmetry() < 1e-14
    assert np.linalg.eigvalsh(M.to_dense()).min() > 0
    ev = np.linalg.eigvalsh(A.to_dense())
    assert ev.min() > (-1e-10 if sp.bc is NEUMANN else 0)


def test_mass_integrates_constants():
    for sp in (space1d(8, 1, NEUMANN, 2.0), space1d(5, 2, NEUMANN), FeSpace(Mesh.unit_square(6), 1, NEUMANN)):
        M, _ = assemble(sp)
        one = np.ones(M.n)
        area = sp.mesh.length ** sp.dim
        assert one @ spmv(M, one) == pytest.approx(area)
        if sp.k != 1:
            with pytest.raises(UsageError):
                assemble(sp, lumped=True)
            continue
        Ml, _ = assemble(sp, lumped=True)
        assert np.count_nonzero(Ml.to_dense() - np.diag(Ml.diagonal())) == 0
        assert Ml.diagonal().sum() == pytest.approx(area)


def test_assemble_full_keeps_boundary():
    sp = space1d(5)
    M, A = assemble_full(sp)
    assert M.n == 6
    _, Ar = assemble(sp)
    np.testing.assert_allclose(A.to_dense()[1:-1, 1:-1], Ar.to_dense())


@pytest.mark.parametrize("sp", [space1d(6), space1d(4, 2), FeSpace(Mesh.unit_square(4))])
def test_projection_reproduces_fe_functions(sp):
    rng = np.random.default_rng(0)
    w = rng.standard_normal(sp.dof_count)
    back = l2_project(lambda x: evaluate(sp, w, x), sp)
    np.testing.assert_allclose(back, w, atol=1e-11)


def test_neumann_projection_of_constant():
    sp = space1d(10, 1, NEUMANN)
    np.testing.assert_allclose(l2_project(lambda x: np.full_like(x, 2.5), sp), 2.5, atol=1e-13)


def test_load_vector_of_one_sums_to_measure():
    sp = FeSpace(Mesh.unit_square(3), 1, NEUMANN)
    assert load_vector(lambda p: np.ones(len(p)), sp).sum() == pytest.approx(1.0)


@pytest.mark.parametrize("k,order", [(1, 2), (2, 3)])
def test_spatial_order(k, order):
    f = lambda x: np.sin(math.pi * x) * np.exp(x)  # noqa: E731
    hs, errs = [], []
    for n in (8, 16, 32, 64):
        sp = space1d(n, k)
        errs.append(l2_error(l2_project(f, sp), f, sp))
        hs.append(1 / n)
    assert rate(errs, hs) == pytest.approx(order, abs=0.1)


def test_interpolant_order_2d():
    f = lambda p: np.sin(math.pi * p[:, 0]) * np.sin(math.pi * p[:, 1])  # noqa: E731
    errs, hs = [], []
    for n in (4, 8, 16, 32):
        sp = FeSpace(Mesh.unit_square(n))
        errs.append(l2_error(sp.nodal_interpolant(f), f, sp))
        hs.append(1 / n)
    assert rate(errs, hs) == pytest.approx(2.0, abs=0.1)


def test_l2_error_examples():
    sp = space1d(16)
    zero = np.zeros(sp.dof_count)
    assert l2_error(zero, lambda x: np.sin(math.pi * x), sp) == pytest.approx(math.sqrt(0.5), rel=1e-10)
    assert l2_error(zero, None, sp) == 0.0
    w = l2_project(lambda x: x * (1 - x), sp)
    M, _ = assemble(sp)
    assert l2_error(w, None, sp) == pytest.approx(mass_norm(w, M), rel=1e-12)


def test_l2_error_with_singular_grading():
    s = 0.3
    f = lambda x: np.abs(x - 0.5) ** (s - 0.5)  # noqa: E731
    exact_sq = 2 * 0.5 ** (2 * s) / (2 * s)
    sp = space1d(8)
    zero = np.zeros(sp.dof_count)
    got = l2_error(zero, f, sp, singular_points=(0.5,))
    assert got ** 2 == pytest.approx(exact_sq, rel=1e-6)


def test_evaluate_and_prolong():
    sp = space1d(4)
    w = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(evaluate(sp, w, [0.0, 0.125, 0.5, 1.0]), [0.0, 0.5, 2.0, 0.0])
    fine = space1d(16)
    p = prolong(sp, w, fine)
    np.testing.assert_allclose(evaluate(fine, p, np.linspace(0, 1, 101)), evaluate(sp, w, np.linspace(0, 1, 101)),
                               atol=1e-14)
    with pytest.raises(DomainError):
        evaluate(sp, w, [1.5])
    with pytest.raises(UsageError):
        evaluate(sp, np.ones(7), [0.5])


def test_cfl_examples():
    sp = space1d(10)
    M, A = assemble(sp)
    assert cfl_check(0.5, 10.0, M, A).passed
    assert cfl_check(1.0, 10.0, M, A).lambda_max is None
    lam = generalized_lambda_max(M, A, iters=400)
    assert lam == pytest.approx(p1_dirichlet_eigenvalues(10).max(), rel=1e-6)
    rep = cfl_check(0.0, 1e-5, M, A)
    assert rep.passed and rep.dt_max == pytest.approx(2 / rep.lambda_max)
    rep = cfl_check(0.0, 1e-2, M, A)
    assert not rep.passed and "violated" in rep.message
    with pytest.raises(CflError):
        HeatState.start(M, A, 0.0, 1e-2, np.zeros(M.n))
    with pytest.raises(DomainError):
        cfl_check(1.5, 1e-3, M, A)


def test_implicit_euler_scales_eigenvector():
    n, m, dt = 20, 3, 0.01
    sp = space1d(n)
    M, A = assemble(sp)
    v = sine_vector(sp, m)
    mu = p1_dirichlet_eigenvalues(n)[m - 1]
    st = theta_step(HeatState.start(M, A, 1.0, dt, v, sp))
    np.testing.assert_allclose(st.W, v / (1 + dt * mu), rtol=1e-12, atol=1e-14)
    assert st.j == 1


def test_zero_stiffness_is_identity():
    sp = space1d(6)
    M, _ = assemble(sp)
    zero = CsrMatrix.from_coo([], [], [], M.n)
    w = np.arange(M.n, dtype=float)
    st = HeatState.start(M, zero, 0.5, 0.3, w, sp)
    for _ in range(5):
        st = theta_step(st)
    np.testing.assert_allclose(st.W, w, rtol=1e-14, atol=1e-14)


@pytest.mark.parametrize("theta,order", [(0.5, 2.0), (1.0, 1.0)])
def test_temporal_order(theta, order):
    n, m, T = 16, 2, 0.05
    sp = space1d(n)
    M, A = assemble(sp)
    v = sine_vector(sp, m)
    mu = p1_dirichlet_eigenvalues(n)[m - 1]
    errs, dts = [], []
    for n_t in (8, 16, 32, 64):
        st = HeatState.start(M, A, theta, T / n_t, v, sp)
        for _ in range(n_t):
            st = theta_step(st)
        errs.append(np.abs(st.W - math.exp(-mu * T) * v).max())
        dts.append(T / n_t)
    assert rate(errs, dts) == pytest.approx(order, abs=0.1)


def test_cg_and_cholesky_steps_agree():
    sp = FeSpace(Mesh.unit_square(8))
    M, A = assemble(sp)
    w = np.random.default_rng(2).standard_normal(M.n)
    a = theta_step(HeatState.start(M, A, 0.5, 1e-3, w, sp))
    b = theta_step(HeatState.start(M, A, 0.5, 1e-3, w, sp, linear_solver="cg"))
    np.testing.assert_allclose(a.W, b.W, rtol=1e-8, atol=1e-10)
    assert b.iterations > 0 and a.iterations == 0


def test_lumped_implicit_euler_preserves_positivity():
    sp = space1d(40)
    M, A = assemble(sp, lumped=True)
    w = np.zeros(M.n)
    w[M.n // 2] = 1.0
    st = HeatState.start(M, A, 1.0, 1e-3, w, sp)
    peak = w.max()
    for _ in range(30):
        st = theta_step(st)
        assert st.W.min() >= 0.0 and st.W.max() <= peak + 1e-15
        peak = st.W.max()


def test_dst_fractional_power():
    sp = space1d(32)
    M, A = assemble(sp)
    w = np.random.default_rng(4).standard_normal(sp.dof_count)
    dense = np.linalg.solve(M.to_dense(), A.to_dense())
    np.testing.assert_allclose(dst_fractional_power(sp, w, 1.0), dense @ w, rtol=1e-9, atol=1e-9)
    half = dst_fractional_power(sp, dst_fractional_power(sp, w, 0.5), 0.5)
    np.testing.assert_allclose(half, dense @ w, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(dst_fractional_power(sp, w, 0.0), w, atol=1e-13)
    ev = np.sort(np.linalg.eigvals(dense).real)
    np.testing.assert_allclose(ev, p1_dirichlet_eigenvalues(32), rtol=1e-10)
    with pytest.raises(UsageError):
        dst_fractional_power(space1d(8, 2), np.zeros(15), 0.5)
