"""Closed-form eigenpairs of the Laplacian on an interval and on the unit square.

Functions are represented by their coefficients in an orthonormal eigenbasis;
the heat semigroup, fractional powers and H^r norms then act coefficientwise.
"""
import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import DomainError, NumericalError, UsageError


class BCKind(enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"
    ROBIN = "robin"


@dataclass(frozen=True)
class BoundaryCondition:
    kind: BCKind
    kappa: float | None = None

    def __post_init__(self):
        kind = BCKind(self.kind) if not isinstance(self.kind, BCKind) else self.kind
        object.__setattr__(self, "kind", kind)
        if kind is BCKind.ROBIN:
            if self.kappa is None or not self.kappa > 0.0:
                raise DomainError("Robin conditions need kappa > 0")
        elif self.kappa is not None:
            raise DomainError(f"kappa is only meaningful for Robin conditions, not {kind.value}")

    @classmethod
    def parse(cls, name, kappa=None):
        kind = BCKind(name.lower())
        return cls(kind, kappa if kind is BCKind.ROBIN else None)

    @property
    def label(self):
        return self.kind.value


DIRICHLET = BoundaryCondition(BCKind.DIRICHLET)
NEUMANN = BoundaryCondition(BCKind.NEUMANN)


def robin(kappa):
    return BoundaryCondition(BCKind.ROBIN, float(kappa))


@dataclass(frozen=True)
class Interval:
    length: float = 1.0
    dim = 1


@dataclass(frozen=True)
class UnitSquare:
    dim = 2


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Retained eigenpairs, ascending in λ.

    On the interval ``modes`` holds the integer index m (or the Robin root μ_m
    in ``roots``); on the square it holds the (m, n) pairs.
    """

    domain: object
    bc: BoundaryCondition
    lambdas: np.ndarray
    modes: np.ndarray
    roots: np.ndarray | None = None
    norms: np.ndarray | None = None

    @property
    def count(self):
        return int(self.lambdas.shape[0])

    @property
    def lambda_min(self):
        return float(self.lambdas[0])

    def eval_modes(self, points, idx=None):
        """Matrix Φ[p, k] = φ_k(points[p]) over the modes selected by ``idx``."""
        sel = slice(None) if idx is None else idx
        if isinstance(self.domain, UnitSquare):
            pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
            mn = self.modes[sel]
            return (2.0 * np.sin(np.pi * np.outer(pts[:, 0], mn[:, 0]))
                    * np.sin(np.pi * np.outer(pts[:, 1], mn[:, 1])))
        x = np.atleast_1d(np.asarray(points, dtype=np.float64))
        L = self.domain.length
        if self.bc.kind is BCKind.DIRICHLET:
            return math.sqrt(2.0 / L) * np.sin(np.outer(x, self.modes[sel]) * (np.pi / L))
        if self.bc.kind is BCKind.NEUMANN:
            return math.sqrt(2.0 / L) * np.cos(np.outer(x, self.modes[sel]) * (np.pi / L))
        mu = self.roots[sel]
        arg = np.outer(x, mu)
        return (mu * np.cos(arg) + self.bc.kappa * np.sin(arg)) / self.norms[sel]

    def eigenfunction(self, k):
        """Point evaluator for the k-th retained eigenfunction (0-based)."""
        def phi(x):
            return self.eval_modes(x, np.array([k]))[:, 0]
        return phi


@dataclass(frozen=True, eq=False)
class SpectralFunction:
    basis: EigenBasis
    coeffs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.shape != (self.basis.count,):
            raise UsageError(f"need {self.basis.count} coefficients, got shape {c.shape}")
        object.__setattr__(self, "coeffs", c)

    def __call__(self, points):
        return evaluate(self, points)

    def l2_norm(self):
        return float(np.linalg.norm(self.coeffs))

    def with_coeffs(self, coeffs, **meta):
        return SpectralFunction(self.basis, coeffs, {**self.meta, **meta})


# --------------------------------------------------------------------------
# eigenpairs
# --------------------------------------------------------------------------

def _robin_characteristic(mu, kappa, L):
    return (mu * mu - kappa * kappa) * math.sin(mu * L) - 2.0 * kappa * mu * math.cos(mu * L)


def robin_roots(kappa, L, count, xtol=1e-14):
    """Positive roots μ_m of tan(μL) = 2κμ/(μ² − κ²), one per bracket ((m−1)π/L, mπ/L)."""
    roots = np.empty(count)
    for m in range(1, count + 1):
        a = (m - 1) * math.pi / L
        b = m * math.pi / L
        lo = a + 1e-12 * (b - a) if m == 1 else a
        fa = _robin_characteristic(lo, kappa, L)
        fb = _robin_characteristic(b, kappa, L)
        if fa * fb > 0.0:
            raise NumericalError(f"Robin root bracket {m} has no sign change")
        roots[m - 1] = scipy.optimize.brentq(_robin_characteristic, lo, b, args=(kappa, L),
                                             xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    return roots


def _robin_norms(mu, kappa, L):
    # ∫_0^L (μ cos μx + κ sin μx)^2 dx in closed form
    s2 = np.sin(2.0 * mu * L)
    c2 = np.cos(2.0 * mu * L)
    sq = (mu ** 2 * (L / 2.0 + s2 / (4.0 * mu)) + kappa ** 2 * (L / 2.0 - s2 / (4.0 * mu))
          + kappa * (1.0 - c2) / 2.0)
    return np.sqrt(sq)


def interval_eigenpairs(L, bc, M):
    if M < 1:
        raise DomainError("need at least one mode")
    if not L > 0.0:
        raise DomainError("interval length must be positive")
    m = np.arange(1, M + 1)
    if bc.kind in (BCKind.DIRICHLET, BCKind.NEUMANN):
        lam = (m * np.pi / L) ** 2
        return EigenBasis(Interval(float(L)), bc, lam, m)
    mu = robin_roots(bc.kappa, L, M)
    return EigenBasis(Interval(float(L)), bc, mu ** 2, m, roots=mu, norms=_robin_norms(mu, bc.kappa, L))


def square_eigenpairs(M_per_axis):
    """Dirichlet eigenpairs 2 sin(mπx) sin(nπy); ties in λ ordered lexicographically in (m, n)."""
    if M_per_axis < 1:
        raise DomainError("need at least one mode per axis")
    m, n = np.meshgrid(np.arange(1, M_per_axis + 1), np.arange(1, M_per_axis + 1), indexing="ij")
    m = m.ravel()
    n = n.ravel()
    key = m * m + n * n
    order = np.lexsort((n, m, key))
    mn = np.stack([m[order], n[order]], axis=1)
    return EigenBasis(UnitSquare(), DIRICHLET, np.pi ** 2 * key[order].astype(float), mn)


def lambda_min(domain, bc):
    """First positive eigenvalue of -Δ with condition ``bc`` on ``domain``."""
    if isinstance(domain, UnitSquare):
        if bc.kind is not BCKind.DIRICHLET:
            raise DomainError("the square oracle only covers Dirichlet conditions")
        return 2.0 * np.pi ** 2
    return interval_eigenpairs(domain.length, bc, 1).lambda_min


# --------------------------------------------------------------------------
# data with closed-form coefficients
# --------------------------------------------------------------------------

class StepDatum:
    """f(x) = 1 for x < 1/2, -1 otherwise, on (0, 1)."""

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.where(x < 0.5, 1.0, -1.0)

    def spectral_coefficients(self, basis):
        if not isinstance(basis.domain, Interval) or basis.domain.length != 1.0:
            raise DomainError("the step datum lives on the unit interval")
        m = basis.modes.astype(np.float64)
        if basis.bc.kind is BCKind.DIRICHLET:
            # √2 ∫ sgn(1/2 - x) sin(mπx) dx
            return math.sqrt(2.0) * (1.0 + np.cos(m * np.pi) - 2.0 * np.cos(m * np.pi / 2.0)) / (m * np.pi)
        if basis.bc.kind is BCKind.NEUMANN:
            return 2.0 * math.sqrt(2.0) * np.sin(m * np.pi / 2.0) / (m * np.pi)
        mu, k = basis.roots, basis.bc.kappa

        def G(x):
            return np.sin(mu * x) - (k / mu) * np.cos(mu * x)
        return (2.0 * G(0.5) - G(0.0) - G(1.0)) / basis.norms


class CheckerboardDatum:
    """f(x, y) = sign((x - 1/2)(y - 1/2)) on the unit square."""

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return np.where((pts[:, 0] - 0.5) * (pts[:, 1] - 0.5) > 0.0, 1.0, -1.0)

    @staticmethod
    def axis_coefficients(m):
        """c_m = √2 ∫_0^1 sgn(x - 1/2) sin(mπx) dx: nonzero only for m ≡ 2 (mod 4)."""
        m = np.asarray(m)
        c = np.zeros(m.shape)
        sel = (m % 4) == 2
        c[sel] = -2.0 * math.sqrt(2.0) / ((m[sel] // 2) * np.pi)
        return c

    def spectral_coefficients(self, basis):
        if not isinstance(basis.domain, UnitSquare):
            raise DomainError("the checkerboard datum lives on the unit square")
        return self.axis_coefficients(basis.modes[:, 0]) * self.axis_coefficients(basis.modes[:, 1])


class EigenDatum:
    """f = scale * φ_k for a retained eigenfunction of ``basis``."""

    def __init__(self, basis, k=0, scale=1.0):
        self.basis = basis
        self.k = k
        self.scale = scale

    def __call__(self, x):
        return self.scale * self.basis.eval_modes(x, np.array([self.k]))[:, 0]

    def spectral_coefficients(self, basis):
        if basis is not self.basis and not (basis.bc == self.basis.bc and basis.domain == self.basis.domain):
            raise UsageError("datum defined on a different eigenbasis")
        c = np.zeros(basis.count)
        c[self.k] = self.scale
        return c


# --------------------------------------------------------------------------
# projection and coefficientwise operators
# --------------------------------------------------------------------------

def project(f, basis, quad_points_per_cell=8, n_cells=None):
    """Coefficients ∫ f φ_m of ``f``; data exposing ``spectral_coefficients`` use them directly.

    Neumann data are made mean-zero first; the removed mean is kept in ``meta``.
    """
    meta = {}
    if hasattr(f, "spectral_coefficients"):
        return SpectralFunction(basis, f.spectral_coefficients(basis), {"source": "closed_form"})
    g, w = np.polynomial.legendre.leggauss(quad_points_per_cell)
    if isinstance(basis.domain, UnitSquare):
        nc = n_cells or max(32, int(basis.modes.max()) * 2)
        e = (np.arange(nc)[:, None] + (g[None, :] + 1.0) / 2.0).ravel() / nc
        we = np.tile(w / (2.0 * nc), nc)
        X, Y = np.meshgrid(e, e, indexing="ij")
        W = np.outer(we, we).ravel()
        pts = np.stack([X.ravel(), Y.ravel()], axis=1)
        vals = np.asarray(f(pts), dtype=np.float64) * W
        coeffs = np.zeros(basis.count)
        for lo in range(0, basis.count, 256):
            idx = np.arange(lo, min(lo + 256, basis.count))
            coeffs[idx] = vals @ basis.eval_modes(pts, idx)
        return SpectralFunction(basis, coeffs, {"source": "quadrature"})
    L = basis.domain.length
    nc = n_cells or max(64, 2 * basis.count)
    x = (np.arange(nc)[:, None] + (g[None, :] + 1.0) / 2.0).ravel() * (L / nc)
    wx = np.tile(w * (L / (2.0 * nc)), nc)
    fx = np.asarray(f(x), dtype=np.float64)
    if basis.bc.kind is BCKind.NEUMANN:
        mean = float(fx @ wx) / L
        fx = fx - mean
        meta["mean_removed"] = mean
    coeffs = np.zeros(basis.count)
    for lo in range(0, basis.count, 512):
        idx = np.arange(lo, min(lo + 512, basis.count))
        coeffs[idx] = (fx * wx) @ basis.eval_modes(x, idx)
    meta["source"] = "quadrature"
    return SpectralFunction(basis, coeffs, meta)


def semigroup_apply(u, t):
    if t < 0:
        raise DomainError("semigroup time must be nonnegative")
    return u.with_coeffs(np.exp(-u.basis.lambdas * t) * u.coeffs)


def frac_power_apply(u, sigma):
    if not -1.0 <= sigma <= 1.0:
        raise DomainError("fractional power must lie in [-1, 1]")
    return u.with_coeffs(u.basis.lambdas ** sigma * u.coeffs)


def hr_norm(u, r):
    if r < 0:
        raise DomainError("H^r norm is defined here for r >= 0")
    return float(np.sqrt(np.sum(u.basis.lambdas ** r * u.coeffs ** 2)))


def evaluate(u, points, budget=1 << 22):
    """Series Σ û_m φ_m at ``points`` (shape (P,) on the interval, (P, 2) on the square).

    Points are processed in chunks so that no dense block exceeds ``budget`` entries.
    """
    basis = u.basis
    nz = np.flatnonzero(u.coeffs)
    if isinstance(basis.domain, UnitSquare):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.zeros(pts.shape[0])
        if nz.size == 0:
            return out
        mn = basis.modes[nz]
        mx, ix = np.unique(mn[:, 0], return_inverse=True)
        my, iy = np.unique(mn[:, 1], return_inverse=True)
        C = np.zeros((mx.size, my.size))
        np.add.at(C, (ix, iy), u.coeffs[nz])
        chunk = max(1, budget // max(mx.size, my.size))
        for lo in range(0, pts.shape[0], chunk):
            p = pts[lo:lo + chunk]
            Sx = np.sin(np.pi * np.outer(p[:, 0], mx))
            Sy = np.sin(np.pi * np.outer(p[:, 1], my))
            out[lo:lo + chunk] = 2.0 * np.einsum("pi,pi->p", Sx @ C, Sy)
        return out
    x = np.atleast_1d(np.asarray(points, dtype=np.float64))
    out = np.zeros(x.shape[0])
    if nz.size == 0:
        return out
    chunk = max(1, budget // nz.size)
    for lo in range(0, x.shape[0], chunk):
        out[lo:lo + chunk] = basis.eval_modes(x[lo:lo + chunk], nz) @ u.coeffs[nz]
    return out
