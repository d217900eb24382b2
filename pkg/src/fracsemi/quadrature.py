"""Monotone quadrature for integrals against the singular measure t^(s-1) dt.

The rule approximates ``(1/Γ(s)) ∫_0^T ρ(t) t^(s-1) dt`` by
``(1/Γ(s)) Σ_j β_j ρ(t_j)`` on a uniform grid ``t_j = j Δt``. The weights are
the exact integrals of ``t^(s-1)`` against the basis functions of an
interpolant whose shape depends on the declared regularity ``r`` of the data:

* piecewise constant (left values)            for r in [0, 2-2s]
* linear, with ρ(t_1) on the first cell       for r in (2-2s, 2)
* piecewise linear                            for r in [2, 4-2s]
* zero on the first cell, constant afterwards for r in (-2s, 0)
"""
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, UsageError


class RegularityMode(enum.Enum):
    PIECEWISE_CONSTANT = "piecewise_constant"
    MIXED_FIRST_CELL = "mixed_first_cell"
    PIECEWISE_LINEAR = "piecewise_linear"
    NEGATIVE_ORDER = "negative_order"


def admissible_r(s):
    """Half-open interval (low, high] of admissible regularity indices for ``s``."""
    return -2.0 * s, 4.0 - 2.0 * s


def _check_s(s):
    if not 0.0 < s < 1.0:
        raise DomainError(f"fractional order s={s!r} must lie in (0, 1)")


def classify_regularity(s, r):
    _check_s(s)
    lo, hi = admissible_r(s)
    if not lo < r <= hi:
        raise DomainError(f"r={r!r} outside the admissible interval ({lo:g}, {hi:g}] for s={s:g}")
    if r < 0.0:
        return RegularityMode.NEGATIVE_ORDER
    if r <= 2.0 - 2.0 * s:
        return RegularityMode.PIECEWISE_CONSTANT
    if r < 2.0:
        return RegularityMode.MIXED_FIRST_CELL
    return RegularityMode.PIECEWISE_LINEAR


def gamma_fn(x):
    """Γ(x) for x > 0."""
    if not x > 0.0:
        raise DomainError(f"gamma_fn is only defined here for x > 0 (got {x!r})")
    return math.gamma(x)


@dataclass(frozen=True)
class QuadratureSpec:
    """Uniform grid on [0, T] with ``n_t`` cells of width ``dt``; ``T = n_t * dt``."""

    s: float
    r: float
    dt: float
    n_t: int
    mode: RegularityMode = field(init=False)

    def __post_init__(self):
        if not self.dt > 0.0:
            raise DomainError("dt must be positive")
        if int(self.n_t) != self.n_t or self.n_t < 1:
            raise DomainError("n_t must be a positive integer")
        object.__setattr__(self, "n_t", int(self.n_t))
        object.__setattr__(self, "mode", classify_regularity(self.s, self.r))

    @property
    def T(self):
        return self.n_t * self.dt

    @property
    def nodes(self):
        return self.dt * np.arange(self.n_t + 1)

    @classmethod
    def from_horizon(cls, s, r, dt, T):
        """Grid whose horizon is ``T`` rounded up to a multiple of ``dt``."""
        if not T > 0.0:
            raise DomainError("T must be positive")
        return cls(s, r, dt, _cells_to_cover(T, dt))

    @classmethod
    def for_decay(cls, s, r, dt, lambda_min, safety=1.01):
        T, n_t = choose_truncation(s, r, dt, lambda_min, safety)
        return cls(s, r, dt, n_t)


def _cells_to_cover(T, dt):
    n = math.ceil(T / dt)
    # guard against T/dt landing a hair above an integer through rounding
    if n > 1 and (n - 1) * dt >= T:
        n -= 1
    return max(1, n)


def choose_truncation(s, r, dt, lambda_min, safety=1.01):
    """Horizon T and cell count so that the neglected tail decays like dt^(r/2+s).

    ``T = safety * (r/2 + s) / lambda_min * log(1/dt)``, rounded up to a multiple
    of ``dt``. Any ``safety > 1`` makes the inequality strict.
    """
    _check_s(s)
    if not 0.0 < dt < 1.0:
        raise DomainError(f"dt={dt!r} must lie in (0, 1) for the logarithmic truncation rule")
    if not lambda_min > 0.0:
        raise DomainError("lambda_min must be positive")
    if safety < 1.0:
        raise DomainError("safety factor must be >= 1")
    order = r / 2.0 + s
    if not order > 0.0:
        raise DomainError(f"r/2 + s must be positive (r={r}, s={s})")
    raw = safety * order / lambda_min * math.log(1.0 / dt)
    n_t = _cells_to_cover(raw, dt)
    return n_t * dt, n_t


@dataclass(frozen=True)
class WeightVector:
    beta: np.ndarray
    gamma_s: float
    spec: QuadratureSpec

    @property
    def total(self):
        return float(np.sum(self.beta))


def _first_differences(p, j):
    """(j+1)^p - j^p for integer j >= 0, without cancellation for large j."""
    j = np.asarray(j, dtype=np.float64)
    out = np.ones_like(j)
    pos = j > 0
    jp = j[pos]
    out[pos] = jp ** p * np.expm1(p * np.log1p(1.0 / jp))
    return out


def compute_weights(spec):
    s, dt, n = spec.s, spec.dt, spec.n_t
    beta = np.zeros(n + 1)
    mode = spec.mode
    if mode in (RegularityMode.PIECEWISE_CONSTANT, RegularityMode.NEGATIVE_ORDER):
        beta[:n] = dt ** s / s * _first_differences(s, np.arange(n))
        if mode is RegularityMode.NEGATIVE_ORDER:
            beta[0] = 0.0
    else:
        p = 1.0 + s
        c = dt ** s / (s * p)
        d1 = _first_differences(p, np.arange(n))          # d1[j] = (j+1)^p - j^p
        if n > 1:
            beta[1:n] = c * (d1[1:n] - d1[0:n - 1])        # second differences
        beta[n] = c * (p * float(n) ** s - d1[n - 1])     # (n-1)^p + p n^s - n^p
        if mode is RegularityMode.PIECEWISE_LINEAR:
            beta[0] = c
        else:
            beta[0] = 0.0
            if n == 1:
                # single cell: the interpolant is the constant ρ(t_1)
                beta[1] = dt ** s / s
            else:
                beta[1] = c * (2.0 ** p - 1.0)
    return WeightVector(beta, gamma_fn(s), spec)


def apply_quadrature(w, samples):
    """(1/Γ(s)) Σ_j β_j ρ(t_j); ``samples`` may carry trailing axes (e.g. one per mode)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[:1] != w.beta.shape:
        raise UsageError(f"expected {w.beta.shape[0]} samples along axis 0, got {samples.shape}")
    out = np.tensordot(w.beta, samples, axes=(0, 0)) / w.gamma_s
    return float(out) if out.ndim == 0 else out


def interpolant_eval(mode, samples, dt, t):
    """Evaluate I_r[ρ](t) for scalar or array ``t`` in [0, T)."""
    samples = np.asarray(samples, dtype=np.float64)
    n_t = samples.shape[0] - 1
    T = n_t * dt
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr >= T):
        raise DomainError(f"t must lie in [0, {T:g})")
    j = np.minimum((t_arr / dt).astype(np.int64), n_t - 1)
    frac = t_arr / dt - j
    left = samples[j]
    right = samples[j + 1]
    if mode is RegularityMode.PIECEWISE_CONSTANT:
        val = left
    elif mode is RegularityMode.PIECEWISE_LINEAR:
        val = (1.0 - frac) * left + frac * right
    elif mode is RegularityMode.MIXED_FIRST_CELL:
        val = np.where(j == 0, samples[min(1, n_t)], (1.0 - frac) * left + frac * right)
    elif mode is RegularityMode.NEGATIVE_ORDER:
        val = np.where(j == 0, 0.0, left)
    else:  # pragma: no cover
        raise DomainError(f"unknown mode {mode!r}")
    return float(val) if np.ndim(val) == 0 else val


def quadrature_rule(s, r, dt, lambda_min, safety=1.01):
    """Shortcut: truncation + weights for decay rate ``lambda_min``."""
    return compute_weights(QuadratureSpec.for_decay(s, r, dt, lambda_min, safety))
