"""Negative fractional powers of the Laplacian by quadrature over the heat semigroup.

``solve_homogeneous`` streams the θ-scheme trajectory W^(0), W^(1), ... through
the quadrature weights, so memory stays O(dofs) however many steps are taken.
"""
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import CflError, DomainError, UsageError
from .fem import FeSpace, HeatState, Mesh, assemble, assemble_full, cfl_check, l2_project, make_solver, theta_step
from .linalg import BandedCholesky, CgConfig, spmv
from .quadrature import QuadratureSpec, RegularityMode, classify_regularity, compute_weights
from .spectral import (BCKind, Interval, UnitSquare, interval_eigenpairs, lambda_min as oracle_lambda_min,
                       project, square_eigenpairs)


@dataclass(frozen=True, eq=False)
class FractionalProblem:
    """(−Δ_B)^s u = f on ``domain`` with B(u) = ``g`` (None or zero: homogeneous).

    ``r`` is the declared regularity index of ``f`` and selects the quadrature.
    ``singular_points`` lists 1D locations where ``f`` is unbounded.
    """

    domain: object
    bc: object
    s: float
    f: object
    r: float
    g: object = None
    singular_points: tuple = ()

    def __post_init__(self):
        classify_regularity(self.s, self.r)
        if isinstance(self.domain, UnitSquare) and self.singular_points:
            raise UsageError("singular points are only supported on the interval")

    @property
    def mode(self):
        return classify_regularity(self.s, self.r)

    @property
    def length(self):
        return self.domain.length if isinstance(self.domain, Interval) else 1.0

    @property
    def dim(self):
        return 2 if isinstance(self.domain, UnitSquare) else 1


@dataclass(frozen=True)
class DiscretizationParams:
    h: float
    a: float = 2.0
    k: int = 1
    theta: float = 0.5
    safety: float = 1.01
    linear_solver: str = "cholesky"
    override_theta_policy: bool = False
    lumped_mass: bool = False
    cg: CgConfig = field(default_factory=lambda: CgConfig(preconditioner="jacobi"))

    def __post_init__(self):
        if not 0.0 < self.h < 1.0:
            raise DomainError("h must lie in (0, 1)")
        if not 0.0 < self.a <= 2.0:
            raise DomainError("a must lie in (0, 2]")
        if self.k not in (1, 2):
            raise DomainError("k must be 1 or 2")
        if not 0.0 <= self.theta <= 1.0:
            raise DomainError("theta must lie in [0, 1]")
        if self.safety < 1.0:
            raise DomainError("safety must be >= 1")
        if self.linear_solver not in ("cholesky", "cg"):
            raise DomainError("linear_solver must be 'cholesky' or 'cg'")

    @property
    def dt(self):
        return self.h ** self.a

    @property
    def tau(self):
        return 2 if self.theta == 0.5 else 1


@dataclass(frozen=True, eq=False)
class SolveResult:
    """``U`` holds all dofs of ``space`` (zeros on eliminated Dirichlet dofs)."""

    U: np.ndarray
    space: FeSpace
    spec: QuadratureSpec
    wall_time: float
    solver_iterations: int
    lambda_min: float
    W0: np.ndarray | None = None

    @property
    def n_t(self):
        return self.spec.n_t

    @property
    def free(self):
        return self.U[self.space.free]


def check_theta_policy(s, r, theta, override=False):
    """Second-order time stepping is needed once r ≥ 2 − 2s."""
    if override or theta == 0.5:
        return
    if r >= 2.0 - 2.0 * s:
        raise UsageError(f"r={r:g} >= 2-2s={2 - 2 * s:g} needs theta = 1/2 (got {theta:g}); "
                         "pass override_theta_policy=True to run anyway")


def build_space(problem, params):
    h = params.h
    mesh = Mesh.from_h(h, problem.dim, problem.length)
    return FeSpace(mesh, params.k, problem.bc)


def resolve_lambda_min(problem, M=None, A=None):
    if isinstance(problem.domain, Interval) or problem.bc.kind is BCKind.DIRICHLET:
        return oracle_lambda_min(problem.domain, problem.bc)
    if M is None:
        raise UsageError("no closed-form λ_min for this domain; pass the assembled matrices")
    return estimate_lambda_min(M, A, neumann=problem.bc.kind is BCKind.NEUMANN)


def _remove_mean(w, M):
    ones = np.ones(M.n)
    Mo = spmv(M, ones)
    return w - (Mo @ w) / (Mo @ ones)


def initial_vector(problem, space, M):
    w0 = l2_project(problem.f, space, singular_points=problem.singular_points, mass=M)
    if problem.bc.kind is BCKind.NEUMANN:
        w0 = _remove_mean(w0, M)
    return w0


def solve_homogeneous(problem, params):
    t0 = time.perf_counter()
    check_theta_policy(problem.s, problem.r, params.theta, params.override_theta_policy)
    space = build_space(problem, params)
    M, A = assemble(space, lumped=params.lumped_mass)
    dt = params.dt
    rep = cfl_check(params.theta, dt, M, A)
    if not rep.passed:
        raise CflError(f"CFL condition violated: {rep.message}")
    lam = resolve_lambda_min(problem, M, A)
    spec = QuadratureSpec.for_decay(problem.s, problem.r, dt, lam, params.safety)
    w = compute_weights(spec)
    w0 = initial_vector(problem, space, M)
    lhs = M.add(A, 1.0, params.theta * dt)
    rhs = M.add(A, 1.0, (params.theta - 1.0) * dt)
    iters = 0
    if params.linear_solver == "cholesky":
        fac = BandedCholesky(lhs).factor
        u, _ = _kernels.theta_sweep(fac, rhs.indptr, rhs.indices, rhs.data, w0, w.beta)
    else:
        ctx = make_solver(lhs, "cg", params.cg)
        u = w.beta[0] * w0
        wj = w0
        for j in range(1, spec.n_t + 1):
            wj, it = ctx.solve(spmv(rhs, wj), x0=wj)
            iters += it
            u += w.beta[j] * wj
    u = u / w.gamma_s
    return SolveResult(space.extend(u), space, spec, time.perf_counter() - t0, iters, lam, w0)


def solve_two_pass(problem, params):
    """Reference implementation storing the whole trajectory before weighting it."""
    check_theta_policy(problem.s, problem.r, params.theta, params.override_theta_policy)
    space = build_space(problem, params)
    M, A = assemble(space, lumped=params.lumped_mass)
    lam = resolve_lambda_min(problem, M, A)
    spec = QuadratureSpec.for_decay(problem.s, problem.r, params.dt, lam, params.safety)
    w = compute_weights(spec)
    state = HeatState.start(M, A, params.theta, params.dt, initial_vector(problem, space, M), space,
                            params.linear_solver, params.cg)
    traj = [state.W]
    for _ in range(spec.n_t):
        state = theta_step(state)
        traj.append(state.W)
    return space.extend(np.tensordot(w.beta, np.array(traj), axes=(0, 0)) / w.gamma_s)


def spectral_basis(problem, n_modes=None):
    if isinstance(problem.domain, UnitSquare):
        if problem.bc.kind is not BCKind.DIRICHLET:
            raise DomainError("the square oracle only covers Dirichlet conditions")
        return square_eigenpairs(n_modes or 320)
    return interval_eigenpairs(problem.domain.length, problem.bc, n_modes or 4096)


def solve_spectral_quadrature(problem, dt, safety=1.01, n_modes=None, basis=None):
    """Quadrature applied to the exact semigroup coefficients (no space discretization)."""
    if basis is None:
        basis = spectral_basis(problem, n_modes)
    fhat = project(problem.f, basis)
    spec = QuadratureSpec.for_decay(problem.s, problem.r, dt, basis.lambda_min, safety)
    w = compute_weights(spec)
    nz = np.flatnonzero(fhat.coeffs)
    coeffs = np.zeros(basis.count)
    if nz.size:
        factors = _kernels.semigroup_quadrature(basis.lambdas[nz], w.beta, dt) / w.gamma_s
        coeffs[nz] = factors * fhat.coeffs[nz]
    return fhat.with_coeffs(coeffs, n_t=spec.n_t, dt=dt, T=spec.T)


# --------------------------------------------------------------------------
# nonhomogeneous boundary data
# --------------------------------------------------------------------------

def _boundary_values(g, space):
    """Values of the Dirichlet datum at the boundary dofs."""
    if space.dim == 1:
        g0, g1 = _endpoint_pair(g)
        return np.array([g0, g1])
    return np.asarray(g(space.coords[space.boundary]), dtype=np.float64)


def _endpoint_pair(g):
    vals = tuple(float(v) for v in g)
    if len(vals) != 2:
        raise UsageError("1D boundary data are a pair (value at 0, value at L)")
    return vals


def _boundary_load(g, space):
    """∮ g φ_i over the boundary (1D: point values at the two ends)."""
    b = np.zeros(space.n_dofs)
    if space.dim == 1:
        g0, g1 = _endpoint_pair(g)
        b[space.boundary[0]] += g0
        b[space.boundary[1]] += g1
        return b
    gp, gw = np.polynomial.legendre.leggauss(4)
    gp = (gp + 1.0) / 2.0
    gw = gw / 2.0
    ed = space.boundary_edges
    pa = space.coords[ed[:, 0]]
    pb = space.coords[ed[:, 1]]
    length = np.linalg.norm(pb - pa, axis=1)
    for t, wt in zip(gp, gw):
        pts = pa + t * (pb - pa)
        val = np.asarray(g(pts), dtype=np.float64) * wt * length
        np.add.at(b, ed[:, 0], val * (1.0 - t))
        np.add.at(b, ed[:, 1], val * t)
    return b


def lift_boundary(g, space, tol=1e-10):
    """Full-dof FE harmonic extension z with B(z) = g."""
    kind = space.bc.kind
    M, A = assemble_full(space)
    if kind is BCKind.DIRICHLET:
        z = np.zeros(space.n_dofs)
        z[space.boundary] = _boundary_values(g, space)
        if not np.any(z):
            return z
        rhs = -spmv(A, z)[space.free]
        Aff = A.submatrix(space.free, space.free)
        z[space.free] = BandedCholesky(Aff).solve(rhs)
        return z
    b = _boundary_load(g, space)
    if not np.any(b):
        return np.zeros(space.n_dofs)
    if kind is BCKind.ROBIN:
        return BandedCholesky(A).solve(b)
    total = float(np.sum(b))
    scale = float(np.sum(np.abs(b)))
    if abs(total) > tol * max(scale, 1.0):
        raise DomainError(f"Neumann data violate compatibility: boundary integral {total:.3e} != 0")
    # pin one dof, solve, then pick the mean-zero representative
    keep = np.arange(1, space.n_dofs)
    z = np.zeros(space.n_dofs)
    z[keep] = BandedCholesky(A.submatrix(keep, keep)).solve(b[keep])
    return _remove_mean(z, M)


def _is_zero_datum(g):
    if g is None:
        return True
    if callable(g):
        return False
    return all(float(v) == 0.0 for v in g)


def solve_nonhomogeneous(problem, params):
    base = solve_homogeneous(problem, params)
    if _is_zero_datum(problem.g):
        return base
    z = lift_boundary(problem.g, base.space)
    return SolveResult(base.U + z, base.space, base.spec, base.wall_time, base.solver_iterations,
                       base.lambda_min, base.W0)


def solve(problem, params):
    """Dispatch on the presence of boundary data."""
    if _is_zero_datum(problem.g):
        return solve_homogeneous(problem, params)
    return solve_nonhomogeneous(problem, params)


# --------------------------------------------------------------------------
# λ_min without an oracle
# --------------------------------------------------------------------------

def estimate_lambda_min(M, A, neumann=False, rel_tol=1e-6, max_iter=500, seed=0, shift=1.0):
    """Smallest positive generalized eigenvalue of (A, M) by shifted inverse iteration.

    For Neumann pencils the constant kernel is deflated every iteration. On
    stagnation a warning is issued and half the last Rayleigh quotient is
    returned as a conservative value.
    """
    rng = np.random.default_rng(seed)
    fac = BandedCholesky(M.add(A, shift, 1.0))
    x = rng.standard_normal(M.n)
    ones = np.ones(M.n)
    Mo = spmv(M, ones)
    oo = Mo @ ones

    def deflate(v):
        return v - (Mo @ v) / oo * ones if neumann else v

    x = deflate(x)
    lam_old = math.inf
    lam = math.inf
    for _ in range(max_iter):
        y = deflate(fac.solve(spmv(M, x)))
        x = y / math.sqrt(y @ spmv(M, y))
        lam = float(x @ spmv(A, x))
        if abs(lam - lam_old) <= rel_tol * abs(lam):
            return lam
        lam_old = lam
    warnings.warn(f"inverse iteration for lambda_min stagnated (last estimate {lam:.6g}); using half of it",
                  RuntimeWarning, stacklevel=2)
    return 0.5 * lam


__all__ = [
    "FractionalProblem", "DiscretizationParams", "SolveResult", "check_theta_policy",
    "solve_homogeneous", "solve_two_pass", "solve_spectral_quadrature", "lift_boundary",
    "solve_nonhomogeneous", "solve", "estimate_lambda_min", "RegularityMode",
]
