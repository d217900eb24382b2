"""Hot loops: CSR products, conjugate gradients, banded Cholesky and the θ-scheme sweep.

Each kernel has a numba-compiled variant and a numpy/scipy variant with the
same signature. The public names bind to the numba variant unless numba is
missing or ``FRACSEMI_NO_NUMBA=1`` is set in the environment; both variants
stay importable (``*_numba`` / ``*_numpy``) for testing and benchmarking.
"""
import math
import os

import numpy as np
import scipy.linalg

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FLAG = os.environ.get("FRACSEMI_NO_NUMBA", "").strip().lower()
HAVE_NUMBA = numba is not None
NUMBA_ENABLED = HAVE_NUMBA and _FLAG not in {"1", "true", "yes", "on"}


def _jit(fn):
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# loop bodies (compiled by numba; never called uncompiled in production)
# --------------------------------------------------------------------------

def _csr_matvec_into_loop(indptr, indices, data, x, out):
    n = indptr.shape[0] - 1
    for i in range(n):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += data[p] * x[indices[p]]
        out[i] = acc


def _banded_factor_loop(ab):
    # ab[d, j] = A[j + d, j]; overwritten by the Cholesky factor L (same layout)
    bw = ab.shape[0] - 1
    n = ab.shape[1]
    for j in range(n):
        ajj = ab[0, j]
        if not ajj > 0.0:
            return j
        ljj = math.sqrt(ajj)
        ab[0, j] = ljj
        m = min(bw, n - 1 - j)
        for d in range(1, m + 1):
            ab[d, j] /= ljj
        for b in range(1, m + 1):
            lb = ab[b, j]
            if lb == 0.0:
                continue
            for a in range(b, m + 1):
                ab[a - b, j + b] -= ab[a, j] * lb
    return -1


def _banded_solve_inplace_loop(fac, y):
    bw = fac.shape[0] - 1
    n = fac.shape[1]
    for i in range(n):
        acc = y[i]
        for d in range(1, min(bw, i) + 1):
            acc -= fac[d, i - d] * y[i - d]
        y[i] = acc / fac[0, i]
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for d in range(1, min(bw, n - 1 - i) + 1):
            acc -= fac[d, i] * y[i + d]
        y[i] = acc / fac[0, i]


_csr_matvec_into_nb = _jit(_csr_matvec_into_loop)
_banded_factor_nb = _jit(_banded_factor_loop)
_banded_solve_inplace_nb = _jit(_banded_solve_inplace_loop)


def _pcg_loop(indptr, indices, data, b, x0, dinv, rtol, maxiter):
    n = b.shape[0]
    x = x0.copy()
    r = np.empty(n)
    q = np.empty(n)
    _csr_matvec_into_nb(indptr, indices, data, x, q)
    for i in range(n):
        r[i] = b[i] - q[i]
    bnorm = math.sqrt(np.dot(b, b))
    rnorm = math.sqrt(np.dot(r, r))
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    tol = rtol * bnorm
    z = dinv * r
    p = z.copy()
    rz = np.dot(r, z)
    it = 0
    while rnorm > tol and it < maxiter:
        _csr_matvec_into_nb(indptr, indices, data, p, q)
        pq = np.dot(p, q)
        if not pq > 0.0:
            break
        alpha = rz / pq
        for i in range(n):
            x[i] += alpha * p[i]
            r[i] -= alpha * q[i]
        rnorm = math.sqrt(np.dot(r, r))
        it += 1
        if rnorm <= tol:
            break
        for i in range(n):
            z[i] = dinv[i] * r[i]
        rz_new = np.dot(r, z)
        beta = rz_new / rz
        rz = rz_new
        for i in range(n):
            p[i] = z[i] + beta * p[i]
    return x, it, rnorm


def _theta_sweep_loop(fac, indptr, indices, data, w0, beta):
    n_t = beta.shape[0] - 1
    n = w0.shape[0]
    w = w0.copy()
    y = np.empty(n)
    u = beta[0] * w0
    for j in range(1, n_t + 1):
        _csr_matvec_into_nb(indptr, indices, data, w, y)
        _banded_solve_inplace_nb(fac, y)
        bj = beta[j]
        for i in range(n):
            w[i] = y[i]
            u[i] += bj * y[i]
    return u, w


def _semigroup_quadrature_loop(lams, beta, dt):
    out = np.zeros(lams.shape[0])
    nb = beta.shape[0]
    for m in range(lams.shape[0]):
        lam = lams[m]
        q = math.exp(-lam * dt)
        acc = 0.0
        e = 1.0
        for j in range(nb):
            if j % 64 == 0:
                e = math.exp(-lam * dt * j)
            if e < 1e-300:
                break
            acc += beta[j] * e
            e *= q
        out[m] = acc
    return out


_pcg_nb = _jit(_pcg_loop)
_theta_sweep_nb = _jit(_theta_sweep_loop)
_semigroup_quadrature_nb = _jit(_semigroup_quadrature_loop)


# --------------------------------------------------------------------------
# numba entry points
# --------------------------------------------------------------------------

def csr_matvec_numba(indptr, indices, data, x):
    out = np.empty(indptr.shape[0] - 1)
    _csr_matvec_into_nb(indptr, indices, data, np.ascontiguousarray(x, dtype=np.float64), out)
    return out


def pcg_numba(indptr, indices, data, b, x0, dinv, rtol, maxiter):
    return _pcg_nb(indptr, indices, data, b, x0, dinv, float(rtol), int(maxiter))


def banded_cholesky_numba(ab):
    fac = np.array(ab, dtype=np.float64, order="C", copy=True)
    bad = _banded_factor_nb(fac)
    if bad >= 0:
        raise np.linalg.LinAlgError(f"banded matrix not positive definite (pivot {bad})")
    return fac


def banded_solve_numba(fac, b):
    y = np.array(b, dtype=np.float64, copy=True)
    _banded_solve_inplace_nb(fac, y)
    return y


def theta_sweep_numba(fac, indptr, indices, data, w0, beta):
    return _theta_sweep_nb(fac, indptr, indices, data, np.asarray(w0, dtype=np.float64),
                           np.asarray(beta, dtype=np.float64))


def semigroup_quadrature_numba(lams, beta, dt):
    return _semigroup_quadrature_nb(np.asarray(lams, dtype=np.float64),
                                    np.asarray(beta, dtype=np.float64), float(dt))


# --------------------------------------------------------------------------
# numpy / scipy entry points
# --------------------------------------------------------------------------

def _row_ids(indptr):
    return np.repeat(np.arange(indptr.shape[0] - 1), np.diff(indptr))


def csr_matvec_numpy(indptr, indices, data, x, rows=None):
    if rows is None:
        rows = _row_ids(indptr)
    return np.bincount(rows, weights=data * np.asarray(x)[indices], minlength=indptr.shape[0] - 1)


def pcg_numpy(indptr, indices, data, b, x0, dinv, rtol, maxiter, callback=None):
    rows = _row_ids(indptr)

    def mv(v):
        return csr_matvec_numpy(indptr, indices, data, v, rows)

    x = np.array(x0, dtype=np.float64, copy=True)
    r = b - mv(x)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    tol = rtol * bnorm
    rnorm = np.linalg.norm(r)
    z = dinv * r
    p = z.copy()
    rz = r @ z
    it = 0
    while rnorm > tol and it < maxiter:
        q = mv(p)
        pq = p @ q
        if not pq > 0.0:
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        rnorm = np.linalg.norm(r)
        it += 1
        if callback is not None:
            callback(x)
        if rnorm <= tol:
            break
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it, rnorm


def banded_cholesky_numpy(ab):
    return scipy.linalg.cholesky_banded(np.asarray(ab, dtype=np.float64), lower=True)


def banded_solve_numpy(fac, b):
    return scipy.linalg.cho_solve_banded((fac, True), np.asarray(b, dtype=np.float64))


def theta_sweep_numpy(fac, indptr, indices, data, w0, beta):
    rows = _row_ids(indptr)
    w = np.array(w0, dtype=np.float64, copy=True)
    u = beta[0] * w
    for j in range(1, beta.shape[0]):
        y = csr_matvec_numpy(indptr, indices, data, w, rows)
        w = scipy.linalg.cho_solve_banded((fac, True), y, check_finite=False)
        u += beta[j] * w
    return u, w


def semigroup_quadrature_numpy(lams, beta, dt, chunk=1 << 22):
    lams = np.asarray(lams, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    out = np.zeros(lams.shape[0])
    step = max(1, chunk // max(1, lams.shape[0]))
    for start in range(0, beta.shape[0], step):
        t = dt * np.arange(start, min(start + step, beta.shape[0]))
        out += np.exp(-np.outer(lams, t)) @ beta[start:start + t.shape[0]]
    return out


if NUMBA_ENABLED:
    csr_matvec = csr_matvec_numba
    pcg = pcg_numba
    banded_cholesky = banded_cholesky_numba
    banded_solve = banded_solve_numba
    theta_sweep = theta_sweep_numba
    semigroup_quadrature = semigroup_quadrature_numba
else:
    csr_matvec = csr_matvec_numpy
    pcg = pcg_numpy
    banded_cholesky = banded_cholesky_numpy
    banded_solve = banded_solve_numpy
    theta_sweep = theta_sweep_numpy
    semigroup_quadrature = semigroup_quadrature_numpy
