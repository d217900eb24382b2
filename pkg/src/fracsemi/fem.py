"""Uniform meshes, Lagrange elements, assembly and θ-scheme heat stepping.

One dimension supports P1 and P2 on [0, L]; two dimensions support P1 on the
structured triangulation of the unit square (each grid cell split along the
diagonal from (i, j) to (i+1, j+1)). Homogeneous Dirichlet conditions are
imposed strongly: the *free* dofs exclude the boundary and all solver-facing
vectors live on the free dofs unless stated otherwise.
"""
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.fft

from .errors import CflError, DomainError, UsageError
from .linalg import BandedCholesky, CgConfig, CsrMatrix, cg_solve, spmv
from .spectral import DIRICHLET, BCKind

# --------------------------------------------------------------------------
# meshes and spaces
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Mesh:
    dim: int
    n: int
    length: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError("mesh dimension must be 1 or 2")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError("need a positive number of cells per axis")
        if self.dim == 2 and self.length != 1.0:
            raise DomainError("two-dimensional meshes cover the unit square only")
        if not self.length > 0.0:
            raise DomainError("domain length must be positive")

    @property
    def h(self):
        return self.length / self.n

    @classmethod
    def interval(cls, n, length=1.0):
        return cls(1, int(n), float(length))

    @classmethod
    def unit_square(cls, n):
        return cls(2, int(n))

    @classmethod
    def from_h(cls, h, dim=1, length=1.0):
        n = round(length / h)
        if n < 1 or abs(n * h - length) > 1e-9 * length:
            raise DomainError(f"h={h!r} does not divide the domain length {length!r} evenly")
        return cls(dim, n, length)

    def triangles(self):
        """(n_tri, 3) vertex indices; node (i, j) has index i + (n+1) j."""
        n = self.n
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        i = i.ravel()
        j = j.ravel()
        v00 = i + (n + 1) * j
        v10 = v00 + 1
        v01 = v00 + (n + 1)
        v11 = v01 + 1
        lower = np.stack([v00, v10, v11], axis=1)
        upper = np.stack([v00, v11, v01], axis=1)
        return np.concatenate([lower, upper], axis=0)


class FeSpace:
    """Continuous Lagrange space of order ``k`` on ``mesh`` with boundary condition ``bc``."""

    def __init__(self, mesh, k=1, bc=DIRICHLET):
        if k not in (1, 2):
            raise DomainError("element order must be 1 or 2")
        if k == 2 and mesh.dim != 1:
            raise DomainError("order 2 elements are only available in one dimension")
        self.mesh = mesh
        self.k = k
        self.bc = bc
        n, h = mesh.n, mesh.h
        if mesh.dim == 1:
            self.n_dofs = k * n + 1
            self.coords = np.linspace(0.0, mesh.length, self.n_dofs)
            base = k * np.arange(n)
            self.cells = np.stack([base + q for q in range(k + 1)], axis=1)
            self.boundary = np.array([0, self.n_dofs - 1])
            self.boundary_edges = None
        else:
            g = np.arange(n + 1) * h
            X, Y = np.meshgrid(g, g, indexing="xy")
            self.coords = np.stack([X.ravel(), Y.ravel()], axis=1)
            self.n_dofs = (n + 1) ** 2
            self.cells = mesh.triangles()
            ii = np.arange(n + 1)
            idx = lambda i, j: i + (n + 1) * j  # noqa: E731
            on = np.zeros(self.n_dofs, dtype=bool)
            on[idx(ii, 0)] = on[idx(ii, n)] = on[idx(0, ii)] = on[idx(n, ii)] = True
            self.boundary = np.flatnonzero(on)
            e = np.arange(n)
            self.boundary_edges = np.concatenate([
                np.stack([idx(e, 0), idx(e + 1, 0)], axis=1),
                np.stack([idx(e, n), idx(e + 1, n)], axis=1),
                np.stack([idx(0, e), idx(0, e + 1)], axis=1),
                np.stack([idx(n, e), idx(n, e + 1)], axis=1),
            ])
        if bc.kind is BCKind.DIRICHLET:
            self.free = np.setdiff1d(np.arange(self.n_dofs), self.boundary)
        else:
            self.free = np.arange(self.n_dofs)

    @property
    def dim(self):
        return self.mesh.dim

    @property
    def h(self):
        return self.mesh.h

    @property
    def dof_count(self):
        return int(self.free.size)

    def extend(self, w):
        """Free-dof vector → full vector (zero on eliminated Dirichlet dofs)."""
        w = np.asarray(w, dtype=np.float64)
        if w.shape == (self.n_dofs,):
            return w
        if w.shape != (self.dof_count,):
            raise UsageError(f"vector of shape {w.shape} fits neither the free nor the full dof set")
        out = np.zeros(self.n_dofs)
        out[self.free] = w
        return out

    def restrict(self, w_full):
        return np.asarray(w_full, dtype=np.float64)[self.free]

    def nodal_interpolant(self, f, free_only=True):
        vals = np.asarray(f(self.coords), dtype=np.float64)
        return vals[self.free] if free_only else vals

    def constant(self, c=1.0):
        return np.full(self.dof_count, float(c))


# --------------------------------------------------------------------------
# element data
# --------------------------------------------------------------------------

_P1_STIFF_1D = np.array([[1.0, -1.0], [-1.0, 1.0]])
_P1_MASS_1D = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
_P2_STIFF_1D = np.array([[7.0, -8.0, 1.0], [-8.0, 16.0, -8.0], [1.0, -8.0, 7.0]]) / 3.0
_P2_MASS_1D = np.array([[4.0, 2.0, -1.0], [2.0, 16.0, 2.0], [-1.0, 2.0, 4.0]]) / 30.0
_P1_MASS_TRI = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0

# degree-5 seven-point rule on the reference triangle (barycentric, weights sum to 1)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_TRI_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
_TRI_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def _shape_1d(k, xi):
    xi = np.asarray(xi, dtype=np.float64)
    if k == 1:
        return np.stack([1.0 - xi, xi], axis=-1)
    return np.stack([2.0 * (xi - 0.5) * (xi - 1.0), 4.0 * xi * (1.0 - xi), 2.0 * xi * (xi - 0.5)], axis=-1)


def _scatter(cells, local, n):
    nloc = cells.shape[1]
    rows = np.repeat(cells, nloc, axis=1).ravel()
    cols = np.tile(cells, (1, nloc)).ravel()
    return rows, cols, local.reshape(local.shape[0], -1).ravel()


def _element_matrices_2d(space):
    xy = space.coords[space.cells]                     # (ne, 3, 2)
    d1 = xy[:, 1] - xy[:, 0]
    d2 = xy[:, 2] - xy[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    area = 0.5 * np.abs(det)
    # gradients of barycentric coordinates
    inv = np.empty((det.size, 2, 2))
    inv[:, 0, 0] = d2[:, 1] / det
    inv[:, 0, 1] = -d2[:, 0] / det
    inv[:, 1, 0] = -d1[:, 1] / det
    inv[:, 1, 1] = d1[:, 0] / det
    g1 = inv[:, 0]
    g2 = inv[:, 1]
    grads = np.stack([-(g1 + g2), g1, g2], axis=1)     # (ne, 3, 2)
    K = area[:, None, None] * np.einsum("eia,eja->eij", grads, grads)
    Mloc = area[:, None, None] * _P1_MASS_TRI[None]
    return Mloc, K


def assemble_full(space, lumped=False):
    """Mass and stiffness over all dofs (Robin boundary mass included in A)."""
    ne = space.cells.shape[0]
    if space.dim == 1:
        h = space.h
        if space.k == 1:
            Ml = np.broadcast_to(h * _P1_MASS_1D, (ne, 2, 2))
            Kl = np.broadcast_to(_P1_STIFF_1D / h, (ne, 2, 2))
        else:
            Ml = np.broadcast_to(h * _P2_MASS_1D, (ne, 3, 3))
            Kl = np.broadcast_to(_P2_STIFF_1D / h, (ne, 3, 3))
    else:
        Ml, Kl = _element_matrices_2d(space)
    n = space.n_dofs
    M = CsrMatrix.from_coo(*_scatter(space.cells, np.ascontiguousarray(Ml), n), n)
    r, c, v = _scatter(space.cells, np.ascontiguousarray(Kl), n)
    if space.bc.kind is BCKind.ROBIN:
        kappa = space.bc.kappa
        if space.dim == 1:
            b = space.boundary
            r = np.concatenate([r, b])
            c = np.concatenate([c, b])
            v = np.concatenate([v, [kappa, kappa]])
        else:
            ed = space.boundary_edges
            local = kappa * space.h * _P1_MASS_1D
            er, ec, ev = _scatter(ed, np.broadcast_to(local, (ed.shape[0], 2, 2)).copy(), n)
            r = np.concatenate([r, er])
            c = np.concatenate([c, ec])
            v = np.concatenate([v, ev])
    A = CsrMatrix.from_coo(r, c, v, n)
    if lumped:
        if space.k != 1:
            raise UsageError("mass lumping is only provided for P1 elements")
        i = np.arange(n)
        M = CsrMatrix.from_coo(i, i, _row_sums(M), n)
    return M, A


def _row_sums(a):
    return np.add.reduceat(a.data, a.indptr[:-1]) if a.nnz else np.zeros(a.n)


def assemble(space, lumped=False):
    """(M, A) restricted to the free dofs of ``space``."""
    M, A = assemble_full(space, lumped)
    if space.dof_count == space.n_dofs:
        return M, A
    return M.submatrix(space.free, space.free), A.submatrix(space.free, space.free)


# --------------------------------------------------------------------------
# quadrature over the mesh
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _MeshRule:
    elem: np.ndarray      # element of each point
    ref: np.ndarray       # reference coordinates (1D: ξ; 2D: barycentric)
    x: np.ndarray         # physical coordinates
    w: np.ndarray         # weights


def _mesh_rule_1d(space, n_quad, singular_points=()):
    h = space.h
    ne = space.cells.shape[0]
    g, gw = np.polynomial.legendre.leggauss(n_quad)
    g = (g + 1.0) / 2.0
    gw = gw / 2.0
    special = {}
    for x0 in singular_points:
        e = min(int(math.floor(x0 / h)), ne - 1)
        xi0 = x0 / h - e
        for ee, xx in ((e, xi0), (e - 1, 1.0)) if abs(xi0) < 1e-14 else ((e, xi0),):
            if 0 <= ee < ne:
                special.setdefault(ee, set()).add(min(max(xx, 0.0), 1.0))
    regular = np.setdiff1d(np.arange(ne), np.fromiter(special, dtype=np.int64, count=len(special)))
    elem = [np.repeat(regular, n_quad)]
    ref = [np.tile(g, regular.size)]
    w = [np.tile(gw, regular.size) * h]
    for e, pts in special.items():
        # stop grading before the sub-intervals drop below the float spacing at x = (e + ξ) h
        levels = 60 if e == 0 and pts == {0.0} else int(-math.log2(64.0 * np.finfo(float).eps * (e + 1)))
        xi, wx = _graded_rule(sorted(pts), g, gw, levels=levels)
        elem.append(np.full(xi.size, e))
        ref.append(xi)
        w.append(wx * h)
    elem = np.concatenate(elem)
    ref = np.concatenate(ref)
    return _MeshRule(elem, ref, (elem + ref) * h, np.concatenate(w))


def _graded_rule(pts, g, gw, ratio=0.5, levels=60):
    """Rule on [0, 1] with geometric refinement towards each point in ``pts``."""
    breaks = sorted({0.0, 1.0, *pts})
    xs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        # sub-intervals shrinking towards whichever end is singular
        left = a in pts
        right = b in pts
        spans = []
        if left and right:
            mid = 0.5 * (a + b)
            spans += _geometric(a, mid, ratio, levels, towards_left=True)
            spans += _geometric(mid, b, ratio, levels, towards_left=False)
        elif left or right:
            spans += _geometric(a, b, ratio, levels, towards_left=left)
        else:
            spans.append((a, b))
        for lo, hi in spans:
            xs.append(lo + (hi - lo) * g)
            ws.append((hi - lo) * gw)
    return np.concatenate(xs), np.concatenate(ws)


def _geometric(a, b, ratio, levels, towards_left):
    L = b - a
    cuts = L * ratio ** np.arange(levels + 1)
    spans = [(a + cuts[i + 1], a + cuts[i]) for i in range(levels)]
    if not towards_left:
        spans = [(b - (hi - a), b - (lo - a)) for lo, hi in spans]
    return spans


def _mesh_rule_2d(space):
    ne = space.cells.shape[0]
    xy = space.coords[space.cells]
    d1 = xy[:, 1] - xy[:, 0]
    d2 = xy[:, 2] - xy[:, 0]
    area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    nq = _TRI_W.size
    pts = np.einsum("qv,evd->eqd", _TRI_BARY, xy).reshape(-1, 2)
    w = (area[:, None] * _TRI_W[None, :]).ravel()
    return _MeshRule(np.repeat(np.arange(ne), nq), np.tile(_TRI_BARY, (ne, 1)), pts, w)


def _mesh_rule(space, n_quad=None, singular_points=()):
    if space.dim == 1:
        return _mesh_rule_1d(space, n_quad or max(space.k + 2, 8), singular_points)
    if singular_points:
        raise UsageError("singular point grading is only available in one dimension")
    return _mesh_rule_2d(space)


def _shape_at(space, rule):
    if space.dim == 1:
        return _shape_1d(space.k, rule.ref)
    return rule.ref


def load_vector(f, space, n_quad=None, singular_points=()):
    """b_i = ∫ f φ_i over all dofs."""
    rule = _mesh_rule(space, n_quad, singular_points)
    fx = np.asarray(f(rule.x), dtype=np.float64) * rule.w
    phi = _shape_at(space, rule)
    dofs = space.cells[rule.elem]
    return np.bincount(dofs.ravel(), weights=(phi * fx[:, None]).ravel(), minlength=space.n_dofs)


def l2_project(f, space, n_quad=None, singular_points=(), mass=None):
    """Free-dof vector W⁰ solving M W⁰ = (∫ f φ_i)_i.

    ``singular_points`` lists 1D locations where ``f`` is unbounded; elements
    touching them get a geometrically graded rule.
    """
    b = load_vector(f, space, n_quad, singular_points)[space.free]
    if mass is None:
        mass, _ = assemble(space)
    return BandedCholesky(mass).solve(b)


def evaluate(space, w, points):
    """Point values of the FE function with dof vector ``w`` (free or full)."""
    wf = space.extend(w)
    h = space.h
    if space.dim == 1:
        x = np.atleast_1d(np.asarray(points, dtype=np.float64))
        if np.any(x < -1e-12) or np.any(x > space.mesh.length + 1e-12):
            raise DomainError("evaluation point outside the mesh")
        e = np.clip(np.floor(x / h).astype(np.int64), 0, space.mesh.n - 1)
        xi = x / h - e
        return np.einsum("pq,pq->p", _shape_1d(space.k, xi), wf[space.cells[e]])
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = space.mesh.n
    i = np.clip(np.floor(p[:, 0] / h).astype(np.int64), 0, n - 1)
    j = np.clip(np.floor(p[:, 1] / h).astype(np.int64), 0, n - 1)
    xi = p[:, 0] / h - i
    eta = p[:, 1] / h - j
    v00 = wf[i + (n + 1) * j]
    v10 = wf[i + 1 + (n + 1) * j]
    v01 = wf[i + (n + 1) * (j + 1)]
    v11 = wf[i + 1 + (n + 1) * (j + 1)]
    lower = eta <= xi
    return np.where(lower,
                    (1.0 - xi) * v00 + (xi - eta) * v10 + eta * v11,
                    (1.0 - eta) * v00 + xi * v11 + (eta - xi) * v01)


def l2_error(w, exact, space, n_quad=None, singular_points=()):
    """‖u_h − exact‖_{L²} by element quadrature; ``exact`` may be None (norm of u_h)."""
    rule = _mesh_rule(space, n_quad, singular_points)
    wf = space.extend(w)
    uh = np.einsum("pq,pq->p", _shape_at(space, rule), wf[space.cells[rule.elem]])
    if exact is not None:
        uh = uh - np.asarray(exact(rule.x), dtype=np.float64)
    return float(math.sqrt(max(0.0, float(np.sum(rule.w * uh * uh)))))


def prolong(coarse, w, fine):
    """Full-dof vector on ``fine`` of the coarse FE function (exact for nested meshes)."""
    return evaluate(coarse, w, fine.coords)


def mass_norm(v, M):
    return float(math.sqrt(max(0.0, float(v @ spmv(M, v)))))


# --------------------------------------------------------------------------
# stability and time stepping
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CflReport:
    passed: bool
    theta: float
    dt: float
    lambda_max: float | None = None
    dt_max: float | None = None

    @property
    def message(self):
        if self.lambda_max is None:
            return f"theta={self.theta:g} >= 1/2: unconditionally stable"
        verdict = "ok" if self.passed else "violated"
        return (f"dt*lambda_max*(1-2*theta) = {self.dt * self.lambda_max * (1 - 2 * self.theta):.4g} "
                f"(bound 2, {verdict}); admissible dt <= {self.dt_max:.4g}")

    def __bool__(self):
        return self.passed


def generalized_lambda_max(M, A, iters=50, seed=0):
    """Power-iteration estimate of the largest eigenvalue of M⁻¹A."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(M.n)
    fac = BandedCholesky(M)
    lam = 0.0
    for _ in range(iters):
        y = fac.solve(spmv(A, x))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        Mx = spmv(M, x)
        lam = float(x @ spmv(A, x)) / float(x @ Mx)
    return lam


def cfl_check(theta, dt, M, A, iters=50, seed=0):
    if not 0.0 <= theta <= 1.0:
        raise DomainError("theta must lie in [0, 1]")
    if not dt > 0.0:
        raise DomainError("dt must be positive")
    if theta >= 0.5:
        return CflReport(True, theta, dt)
    lam = generalized_lambda_max(M, A, iters, seed)
    if lam <= 0.0:
        return CflReport(True, theta, dt, lam, math.inf)
    dt_max = 2.0 / (lam * (1.0 - 2.0 * theta))
    return CflReport(dt <= dt_max, theta, dt, lam, dt_max)


class _CholeskyContext:
    kind = "cholesky"

    def __init__(self, lhs):
        self.factor = BandedCholesky(lhs)

    def solve(self, b, x0=None):
        return self.factor.solve(b), 0


class _CgContext:
    kind = "cg"

    def __init__(self, lhs, cfg):
        self.lhs = lhs
        self.cfg = cfg

    def solve(self, b, x0=None):
        res = cg_solve(self.lhs, b, self.cfg, x0=x0)
        return res.x, res.iterations


def make_solver(lhs, linear_solver="cholesky", cg=None):
    if linear_solver == "cholesky":
        return _CholeskyContext(lhs)
    if linear_solver == "cg":
        return _CgContext(lhs, cg or CgConfig(preconditioner="jacobi"))
    raise DomainError(f"unknown linear solver {linear_solver!r}")


@dataclass(frozen=True, eq=False)
class HeatState:
    """θ-scheme state: W is W^(j) on the free dofs; the left-hand solver is shared across steps."""

    theta: float
    dt: float
    j: int
    W: np.ndarray
    lhs: CsrMatrix
    rhs: CsrMatrix
    solver: object
    space: FeSpace | None = None
    iterations: int = 0

    @classmethod
    def start(cls, M, A, theta, dt, W0, space=None, linear_solver="cholesky", cg=None, check_cfl=True):
        rep = cfl_check(theta, dt, M, A, iters=50 if check_cfl else 0)
        if not rep.passed:
            raise CflError(f"CFL condition violated: {rep.message}")
        W0 = np.array(W0, dtype=np.float64)
        if W0.shape != (M.n,):
            raise UsageError("initial vector does not match the matrix size")
        lhs = M.add(A, 1.0, theta * dt)
        rhs = M.add(A, 1.0, (theta - 1.0) * dt)
        return cls(float(theta), float(dt), 0, W0, lhs, rhs, make_solver(lhs, linear_solver, cg), space)


def theta_step(state):
    """Advance one step: (M + θΔtA) W^(j) = (M + (θ−1)ΔtA) W^(j−1)."""
    w, it = state.solver.solve(spmv(state.rhs, state.W), x0=state.W)
    return replace(state, j=state.j + 1, W=w, iterations=state.iterations + it)


# --------------------------------------------------------------------------
# uniform P1 Dirichlet meshes: exact diagonalization by discrete sines
# --------------------------------------------------------------------------

def p1_dirichlet_eigenvalues(n, length=1.0):
    """Eigenvalues of M⁻¹A for P1 on a uniform n-cell Dirichlet mesh (sine modes m = 1..n−1)."""
    h = length / n
    th = np.arange(1, n) * math.pi / n
    return 6.0 * (1.0 - np.cos(th)) / (h * h * (2.0 + np.cos(th)))


def dst_fractional_power(space, w, sigma):
    """(M⁻¹A)^σ w exactly, for the uniform 1D P1 Dirichlet space."""
    if space.dim != 1 or space.k != 1 or space.bc.kind is not BCKind.DIRICHLET:
        raise UsageError("the sine diagonalization needs 1D P1 with Dirichlet conditions")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (space.dof_count,):
        raise UsageError("expected a free-dof vector")
    mu = p1_dirichlet_eigenvalues(space.mesh.n, space.mesh.length)
    return scipy.fft.idst(mu ** sigma * scipy.fft.dst(w, type=1), type=1)
