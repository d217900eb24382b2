"""Compressed-row matrices, preconditioned conjugate gradients and a cached banded Cholesky."""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError, NumericalError, UsageError


@dataclass(frozen=True)
class CsrMatrix:
    """Square sparse matrix in compressed-row layout."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n: int

    @classmethod
    def from_coo(cls, rows, cols, vals, n):
        """Build from triplets, summing duplicates; column indices sorted per row."""
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if rows.size:
            if rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n:
                raise DomainError("triplet index outside the matrix dimension")
        key = rows * n + cols
        order = np.argsort(key, kind="stable")
        key = key[order]
        vals = vals[order]
        uniq, start = np.unique(key, return_index=True)
        data = np.add.reduceat(vals, start) if vals.size else vals
        r = uniq // n
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, r + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(indptr, (uniq % n).astype(np.int64), np.ascontiguousarray(data), int(n))

    @classmethod
    def from_dense(cls, a, tol=0.0):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise UsageError("dense input must be a square matrix")
        r, c = np.nonzero(np.abs(a) > tol)
        return cls.from_coo(r, c, a[r, c], a.shape[0])

    @classmethod
    def identity(cls, n):
        i = np.arange(n)
        return cls.from_coo(i, i, np.ones(n), n)

    @property
    def nnz(self):
        return int(self.data.size)

    def row_ids(self):
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    def diagonal(self):
        d = np.zeros(self.n)
        rows = self.row_ids()
        on = rows == self.indices
        d[rows[on]] = self.data[on]
        return d

    def to_dense(self):
        a = np.zeros((self.n, self.n))
        np.add.at(a, (self.row_ids(), self.indices), self.data)
        return a

    def transpose(self):
        return CsrMatrix.from_coo(self.indices, self.row_ids(), self.data, self.n)

    def bandwidth(self):
        if self.nnz == 0:
            return 0
        return int(np.max(np.abs(self.row_ids() - self.indices)))

    def lower_band(self):
        """Lower band storage ``ab[d, j] = A[j + d, j]`` (LAPACK 'L' layout)."""
        bw = self.bandwidth()
        ab = np.zeros((bw + 1, self.n))
        rows = self.row_ids()
        low = rows >= self.indices
        ab[rows[low] - self.indices[low], self.indices[low]] = self.data[low]
        return ab

    def add(self, other, alpha=1.0, beta=1.0):
        """Return ``alpha*self + beta*other``."""
        if other.n != self.n:
            raise UsageError("dimension mismatch in matrix sum")
        rows = np.concatenate([self.row_ids(), other.row_ids()])
        cols = np.concatenate([self.indices, other.indices])
        vals = np.concatenate([alpha * self.data, beta * other.data])
        return CsrMatrix.from_coo(rows, cols, vals, self.n)

    def submatrix(self, rows_keep, cols_keep):
        """Extract the block with the given (sorted, unique) row and column index sets."""
        rmap = np.full(self.n, -1, dtype=np.int64)
        cmap = np.full(self.n, -1, dtype=np.int64)
        rmap[rows_keep] = np.arange(len(rows_keep))
        cmap[cols_keep] = np.arange(len(cols_keep))
        r = rmap[self.row_ids()]
        c = cmap[self.indices]
        keep = (r >= 0) & (c >= 0)
        if len(rows_keep) != len(cols_keep):
            raise UsageError("only square blocks are representable")
        return CsrMatrix.from_coo(r[keep], c[keep], self.data[keep], len(rows_keep))

    def asymmetry(self):
        """max |A - A^T| entry."""
        d = self.add(self.transpose(), 1.0, -1.0)
        return float(np.max(np.abs(d.data))) if d.nnz else 0.0

    def __matmul__(self, x):
        return spmv(self, x)


def spmv(a, x):
    """y = A x."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != a.n:
        raise UsageError(f"vector of length {x.shape} does not match matrix of size {a.n}")
    return _kernels.csr_matvec(a.indptr, a.indices, a.data, x)


@dataclass(frozen=True)
class CgConfig:
    rel_tol: float = 1e-10
    max_iter: int | None = None
    preconditioner: str = "none"

    def __post_init__(self):
        if not 0.0 < self.rel_tol < 1.0:
            raise DomainError("rel_tol must lie in (0, 1)")
        if self.max_iter is not None and self.max_iter < 1:
            raise DomainError("max_iter must be at least 1")
        if self.preconditioner not in ("none", "jacobi"):
            raise DomainError("preconditioner must be 'none' or 'jacobi'")


@dataclass
class CgResult:
    x: np.ndarray
    iterations: int
    residual: float

    def __iter__(self):
        return iter((self.x, self.iterations, self.residual))


def cg_solve(a, b, cfg=CgConfig(), x0=None, callback=None):
    """Preconditioned conjugate gradients for symmetric positive definite ``a``.

    Returns ``CgResult(x, iterations, residual)`` with ``residual`` the true
    relative residual ``|b - Ax| / |b|``. Raises ``NumericalError`` when the
    tolerance is not met within ``max_iter`` iterations. ``callback(x)`` is
    invoked after every iteration (this forces the numpy code path).
    """
    b = np.ascontiguousarray(b, dtype=np.float64)
    if b.shape != (a.n,):
        raise UsageError("right-hand side length does not match the matrix")
    max_iter = cfg.max_iter if cfg.max_iter is not None else 10 * a.n
    x = np.zeros(a.n) if x0 is None else np.array(x0, dtype=np.float64, copy=True)
    if cfg.preconditioner == "jacobi":
        d = a.diagonal()
        if np.any(d <= 0):
            raise NumericalError("Jacobi preconditioner needs a positive diagonal")
        dinv = 1.0 / d
    else:
        dinv = np.ones(a.n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return CgResult(np.zeros(a.n), 0, 0.0)
    total = 0
    # recurrence residuals can drift from the true one; restart from the iterate
    for _ in range(4):
        remaining = max_iter - total
        if remaining <= 0:
            break
        if callback is None:
            x, it, _ = _kernels.pcg(a.indptr, a.indices, a.data, b, x, dinv, cfg.rel_tol, remaining)
        else:
            x, it, _ = _kernels.pcg_numpy(a.indptr, a.indices, a.data, b, x, dinv, cfg.rel_tol,
                                          remaining, callback=callback)
        total += it
        res = np.linalg.norm(b - spmv(a, x)) / bnorm
        if res <= cfg.rel_tol:
            return CgResult(x, total, float(res))
        if it == 0:
            break
    raise NumericalError(f"CG did not reach rel_tol={cfg.rel_tol:g} in {total} iterations "
                         f"(relative residual {res:.3e})", residual=float(res), iterations=total)


class BandedCholesky:
    """Cholesky factor of a symmetric positive definite banded matrix, reusable across solves."""

    def __init__(self, a):
        self.n = a.n
        self.bandwidth = a.bandwidth()
        try:
            self.factor = _kernels.banded_cholesky(a.lower_band())
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"matrix is not positive definite: {exc}") from exc

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (self.n,):
            raise UsageError("right-hand side length does not match the factor")
        return _kernels.banded_solve(self.factor, b)
