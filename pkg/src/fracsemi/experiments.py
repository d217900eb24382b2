"""Convergence and cost studies: configuration, case catalogue, slope fits and CSV output."""
import csv
import dataclasses
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericalError, UsageError
from .fem import FeSpace, Mesh, assemble, dst_fractional_power, l2_error, l2_project, mass_norm, prolong
from .quadrature import choose_truncation
from .solver import DiscretizationParams, FractionalProblem, solve, solve_spectral_quadrature
from .spectral import (DIRICHLET, BoundaryCondition, CheckerboardDatum, EigenDatum, Interval, SpectralFunction,
                       StepDatum, UnitSquare, interval_eigenpairs, square_eigenpairs)
from .spectral import evaluate as spectral_evaluate

CASES = ("eig1d", "eig1d_aopt", "singular1d", "checkerboard2d", "step1d_bcs", "nonhomog1d", "quad_only")

# exponent of the integrable singularity x^(-1/2 + EPSILON)
EPSILON = 0.01
STEP_R = 0.45


def _pow2(lo, hi):
    return tuple(2.0 ** -e for e in range(lo, hi + 1))


_DEFAULTS = {
    "eig1d": dict(s=(0.1, 0.5, 0.9), r=1.5, theta=0.5, a=2.0, h=_pow2(3, 9)),
    "eig1d_aopt": dict(s=(0.1, 0.5, 0.9), r=2.0, theta=0.5, a="opt", h=_pow2(3, 9)),
    "singular1d": dict(s=(0.25, 0.5, 0.75), r=0.0, theta=1.0, a=1.0, h=_pow2(3, 10), h_ref=2.0 ** -13),
    "checkerboard2d": dict(s=(0.1, 0.3, 0.5, 0.8, 0.9), r=STEP_R, theta=0.5, a=2.0, h=_pow2(3, 6),
                           reference_modes=1280),
    "step1d_bcs": dict(s=(0.3,), r=STEP_R, theta=0.5, a=2.0, h=_pow2(3, 9),
                       bc=("dirichlet", "neumann", "robin"), reference_modes=16384),
    "nonhomog1d": dict(s=(0.5,), r=1.5, theta=0.5, a=2.0, h=_pow2(3, 9)),
    "quad_only": dict(s=(0.1, 0.5, 0.9), r=1.5, theta=0.5, a=2.0, h=_pow2(3, 9)),
}


@dataclass(frozen=True)
class RunConfig:
    case: str
    s: tuple = (0.5,)
    r: float = 1.5
    k: int = 1
    theta: float = 0.5
    a: object = 2.0
    h: tuple = _pow2(3, 9)
    out: str | None = None
    reference_modes: int | None = None
    h_ref: float | None = None
    bc: tuple = ("dirichlet",)
    kappa: float = 1.0
    safety: float = 1.01
    boundary_values: tuple = (1.0, 2.0)

    def __post_init__(self):
        if self.case not in CASES:
            raise DomainError(f"unknown case {self.case!r}; expected one of {', '.join(CASES)}")
        object.__setattr__(self, "s", tuple(float(v) for v in _as_tuple(self.s)))
        object.__setattr__(self, "h", tuple(float(v) for v in _as_tuple(self.h)))
        object.__setattr__(self, "bc", tuple(str(v).lower() for v in _as_tuple(self.bc)))
        if not self.s or not self.h:
            raise DomainError("need at least one s and one h")
        if self.a != "opt" and not 0.0 < float(self.a) <= 2.0:
            raise DomainError("a must lie in (0, 2] or be 'opt'")

    @classmethod
    def for_case(cls, case, **overrides):
        if case not in CASES:
            raise DomainError(f"unknown case {case!r}")
        merged = {**_DEFAULTS[case], **{k: v for k, v in overrides.items() if v is not None}}
        return cls(case=case, **merged)

    def validate_study(self):
        if len(self.h) < 4:
            raise UsageError("a slope study needs at least 4 mesh sizes")
        if any(b >= a for a, b in zip(self.h, self.h[1:])):
            raise UsageError("h list must be strictly decreasing")
        return self

    def a_for(self, s):
        if self.a == "opt":
            return 2.0 / (self.r / 2.0 + s)
        return float(self.a)


def _as_tuple(v):
    if isinstance(v, (list, tuple)):
        return tuple(v)
    return (v,)


def parse_number(text):
    text = text.strip()
    if "^" in text:
        base, exp = text.split("^", 1)
        return float(base) ** float(exp)
    return float(text)


_LIST_FIELDS = {"s": parse_number, "h": parse_number, "bc": str, "boundary_values": parse_number}
_SCALAR_FIELDS = {"case": str, "r": parse_number, "k": int, "theta": parse_number, "out": str,
                  "reference_modes": int, "h_ref": parse_number, "kappa": parse_number,
                  "safety": parse_number}


def parse_config(text):
    """``key = value`` lines, ``#`` comments, comma-separated lists; keys are RunConfig fields."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"line {lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        try:
            if key in _LIST_FIELDS:
                values[key] = tuple(_LIST_FIELDS[key](v.strip()) for v in val.split(",") if v.strip())
            elif key == "a":
                values[key] = "opt" if val.lower() in ("opt", "aopt") else parse_number(val)
            elif key in _SCALAR_FIELDS:
                values[key] = _SCALAR_FIELDS[key](val)
            else:
                raise UsageError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise UsageError(f"line {lineno}: cannot parse {val!r} for {key!r}") from exc
    if "case" not in values:
        raise UsageError("config must set 'case'")
    return RunConfig.for_case(values.pop("case"), **values)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# --------------------------------------------------------------------------
# tables
# --------------------------------------------------------------------------

CSV_FIELDS = ("case", "s", "r", "k", "theta", "a", "h", "dt", "N_T", "error_l2", "slope", "wall_ms")


@dataclass
class Row:
    case: str
    s: float
    r: float
    k: int
    theta: float
    a: float
    h: float
    dt: float
    N_T: int
    error_l2: float
    slope: float = math.nan
    wall_ms: float = math.nan
    message: str | None = None

    @property
    def ok(self):
        return self.message is None and math.isfinite(self.error_l2)


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def groups(self):
        out = {}
        for row in self.rows:
            out.setdefault((row.case, row.s), []).append(row)
        return out

    def slope(self, case, s):
        return self.slopes[(case, float(s))][0]

    def refit(self):
        self.slopes = {}
        for key, rows in self.groups().items():
            pts = [(r.h, r.error_l2) for r in rows if r.ok and r.error_l2 > 0.0]
            if len(pts) >= 2:
                self.slopes[key] = fit_slope(pts)
                for r in rows:
                    r.slope = self.slopes[key][0]
        return self


def fit_slope(points):
    """Least-squares slope of log(error) against log(h) over the last min(4, n) points.

    Returns ``(slope, residual)`` with ``residual`` the RMS deviation in log space.
    """
    pts = list(points)
    if len(pts) < 2:
        raise DomainError("need at least two points to fit a slope")
    pts = pts[-min(4, len(pts)):]
    h = np.array([p[0] for p in pts], dtype=np.float64)
    e = np.array([p[1] for p in pts], dtype=np.float64)
    if np.any(h <= 0.0) or np.any(e <= 0.0):
        raise DomainError("slope fits need positive h and error values")
    x = np.log(h)
    y = np.log(e)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    return float(coef[0]), float(math.sqrt(np.mean(resid ** 2)))


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.17g" % float(v)


def emit_csv(table, path):
    """Write the rows of ``table``; ``path='-'`` writes to stdout.

    Metadata, when present, goes to a JSON sidecar ``<path>.meta.json``.
    """
    buf = io.StringIO()
    buf.write(",".join(CSV_FIELDS) + "\n")
    for row in table.rows:
        buf.write(",".join(row.case if f == "case" else _fmt(getattr(row, f)) for f in CSV_FIELDS) + "\n")
    text = buf.getvalue()
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    if table.meta:
        with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(table.meta, fh, indent=2, sort_keys=True, default=str)


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise UsageError(f"unexpected CSV header {reader.fieldnames}")
        rows = []
        for rec in reader:
            rows.append(Row(rec["case"], float(rec["s"]), float(rec["r"]), int(rec["k"]), float(rec["theta"]),
                            float(rec["a"]), float(rec["h"]), float(rec["dt"]), int(rec["N_T"]),
                            float(rec["error_l2"]), float(rec["slope"]), float(rec["wall_ms"])))
    return ConvergenceTable(rows)


# --------------------------------------------------------------------------
# case catalogue
# --------------------------------------------------------------------------

class _Eigen1d:
    """f = λ₁^s φ₁ on (0, 1) with Dirichlet conditions; u = φ₁ (+ linear lifting)."""

    def __init__(self, cfg, with_lifting=False):
        self.cfg = cfg
        self.basis = interval_eigenpairs(1.0, DIRICHLET, 1)
        self.phi = self.basis.eigenfunction(0)
        self.with_lifting = with_lifting

    def label(self):
        return self.cfg.case

    def run(self, s, h):
        cfg = self.cfg
        lam1 = self.basis.lambda_min
        f = EigenDatum(self.basis, 0, lam1 ** s)
        g = None
        exact = self.phi
        if self.with_lifting:
            g0, g1 = cfg.boundary_values
            g = (g0, g1)
            exact = lambda x: self.phi(x) + g0 + (g1 - g0) * np.asarray(x)  # noqa: E731
        problem = FractionalProblem(Interval(1.0), DIRICHLET, s, f, cfg.r, g=g)
        a = cfg.a_for(s)
        if cfg.case == "quad_only":
            dt = h ** a
            t0 = time.perf_counter()
            u = solve_spectral_quadrature(problem, dt, cfg.safety, basis=self.basis)
            wall = time.perf_counter() - t0
            return abs(u.coeffs[0] - 1.0), a, dt, u.meta["n_t"], wall
        params = DiscretizationParams(h=h, a=a, k=cfg.k, theta=cfg.theta, safety=cfg.safety)
        res = solve(problem, params)
        return l2_error(res.U, exact, res.space), a, params.dt, res.n_t, res.wall_time


class _Singular1d:
    """f = x^(-1/2+ε); reference: exact discrete fractional power on a fine P1 mesh."""

    def __init__(self, cfg):
        if cfg.k != 1:
            raise UsageError("the singular datum study uses P1 elements")
        self.cfg = cfg
        self.h_ref = cfg.h_ref or 2.0 ** -13
        self.fine = FeSpace(Mesh.from_h(self.h_ref), 1, DIRICHLET)
        self.M_fine, _ = assemble(self.fine)
        self.w0_fine = l2_project(self.f, self.fine, singular_points=(0.0,), mass=self.M_fine)
        self.refs = {}

    @staticmethod
    def f(x):
        return np.asarray(x, dtype=np.float64) ** (-0.5 + EPSILON)

    def label(self):
        return self.cfg.case

    def reference(self, s):
        if s not in self.refs:
            self.refs[s] = dst_fractional_power(self.fine, self.w0_fine, -s)
        return self.refs[s]

    def run(self, s, h):
        cfg = self.cfg
        if h <= self.h_ref:
            raise UsageError("study mesh must be coarser than the reference mesh")
        problem = FractionalProblem(Interval(1.0), DIRICHLET, s, self.f, cfg.r, singular_points=(0.0,))
        a = cfg.a_for(s)
        params = DiscretizationParams(h=h, a=a, k=1, theta=cfg.theta, safety=cfg.safety)
        res = solve(problem, params)
        diff = self.fine.restrict(prolong(res.space, res.U, self.fine)) - self.reference(s)
        return mass_norm(diff, self.M_fine), a, params.dt, res.n_t, res.wall_time


class _Checkerboard2d:
    def __init__(self, cfg):
        self.cfg = cfg
        self.basis = square_eigenpairs(cfg.reference_modes or 1280)
        self.datum = CheckerboardDatum()
        self.fhat = self.datum.spectral_coefficients(self.basis)

    def label(self):
        return self.cfg.case

    def exact(self, s):
        u = SpectralFunction(self.basis, self.basis.lambdas ** (-s) * self.fhat)
        return lambda pts: spectral_evaluate(u, pts)

    def run(self, s, h):
        cfg = self.cfg
        problem = FractionalProblem(UnitSquare(), DIRICHLET, s, self.datum, cfg.r)
        a = cfg.a_for(s)
        params = DiscretizationParams(h=h, a=a, k=1, theta=cfg.theta, safety=cfg.safety)
        res = solve(problem, params)
        return l2_error(res.U, self.exact(s), res.space), a, params.dt, res.n_t, res.wall_time


class _Step1d:
    def __init__(self, cfg, bc_name):
        self.cfg = cfg
        self.bc = BoundaryCondition.parse(bc_name, cfg.kappa)
        self.basis = interval_eigenpairs(1.0, self.bc, cfg.reference_modes or 16384)
        self.datum = StepDatum()
        self.fhat = self.datum.spectral_coefficients(self.basis)
        self.last = {}

    def label(self):
        return f"{self.cfg.case}/{self.bc.label}"

    def exact(self, s):
        u = SpectralFunction(self.basis, self.basis.lambdas ** (-s) * self.fhat)
        return lambda x: spectral_evaluate(u, x)

    def run(self, s, h):
        cfg = self.cfg
        problem = FractionalProblem(Interval(1.0), self.bc, s, self.datum, cfg.r)
        a = cfg.a_for(s)
        params = DiscretizationParams(h=h, a=a, k=cfg.k, theta=cfg.theta, safety=cfg.safety)
        res = solve(problem, params)
        self.last[(s, h)] = res
        return l2_error(res.U, self.exact(s), res.space), a, params.dt, res.n_t, res.wall_time


def _drivers(cfg):
    if cfg.case in ("eig1d", "eig1d_aopt", "quad_only"):
        return [_Eigen1d(cfg)]
    if cfg.case == "nonhomog1d":
        return [_Eigen1d(cfg, with_lifting=True)]
    if cfg.case == "singular1d":
        return [_Singular1d(cfg)]
    if cfg.case == "checkerboard2d":
        return [_Checkerboard2d(cfg)]
    return [_Step1d(cfg, name) for name in cfg.bc]


def case_metadata(cfg):
    meta = {"config": {k: v for k, v in dataclasses.asdict(cfg).items()}}
    if cfg.case == "singular1d":
        meta.update(epsilon=EPSILON, reference="discrete fractional power, P1 Dirichlet",
                    h_ref=cfg.h_ref or 2.0 ** -13)
    elif cfg.case == "checkerboard2d":
        m = cfg.reference_modes or 1280
        meta.update(r=cfg.r, reference="spectral series", modes_per_axis=m, nonzero_modes=(m // 4) ** 2)
    elif cfg.case == "step1d_bcs":
        meta.update(r=cfg.r, reference="spectral series", modes=cfg.reference_modes or 16384, kappa=cfg.kappa)
    else:
        meta.update(reference="first eigenfunction")
    return meta


def run_case(config, study=True, keep_results=False):
    """Run every (driver, s, h) point of ``config`` and fit slopes per (case label, s).

    Solver failures are recorded in the row's ``message`` and leave the error NaN.
    """
    if study:
        config.validate_study()
    table = ConvergenceTable(meta=case_metadata(config))
    for drv in _drivers(config):
        for s in config.s:
            for h in config.h:
                a = config.a_for(s)
                try:
                    err, a, dt, n_t, wall = drv.run(s, h)
                    row = Row(drv.label(), s, config.r, config.k, config.theta, a, h, dt, int(n_t),
                              float(err), wall_ms=1e3 * wall)
                except (DomainError, UsageError, NumericalError) as exc:
                    row = Row(drv.label(), s, config.r, config.k, config.theta, a, h, h ** a, 0, math.nan,
                              message=f"{type(exc).__name__}: {exc}")
                table.rows.append(row)
        if keep_results and hasattr(drv, "last"):
            table.extras[drv.label()] = drv.last
    return table.refit()


# --------------------------------------------------------------------------
# cost of the time discretization
# --------------------------------------------------------------------------

# number of time nodes reported for r = 2 on (0, 1) with Dirichlet conditions,
# keyed by s, then h: (a = 2, a = 2/(1+s))
REFERENCE_NODE_COUNTS = {
    0.1: {0.1: (38, 23), 0.05: (200, 105), 0.025: (1012, 465), 0.0125: (4921, 1991),
          0.00625: (23248, 8293), 0.003125: (107462, 33809)},
    0.5: {0.1: (51, 7), 0.05: (279, 23), 0.025: (1432, 75), 0.0125: (7011, 233),
          0.00625: (33217, 702), 0.003125: (153684, 2058)},
    0.9: {0.1: (66, 3), 0.05: (369, 10), 0.025: (1899, 26), 0.0125: (9290, 67),
          0.00625: (43945, 167), 0.003125: (202959, 407)},
}


@dataclass(frozen=True)
class CostRow:
    s: float
    h: float
    a_label: str
    a: float
    n_t: int
    n_t_reference: int

    @property
    def ratio(self):
        return self.n_t / self.n_t_reference

    @property
    def within_factor_two(self):
        return 0.5 <= self.ratio <= 2.0


def cost_report(r=2.0, lambda_min=math.pi ** 2, safety=1.01):
    rows = []
    for s, by_h in REFERENCE_NODE_COUNTS.items():
        for h, (ref2, refopt) in by_h.items():
            for label, a, ref in (("2", 2.0, ref2), ("opt", 2.0 / (r / 2.0 + s), refopt)):
                _, n_t = choose_truncation(s, r, h ** a, lambda_min, safety)
                rows.append(CostRow(s, h, label, a, n_t, ref))
    return rows


def format_cost_report(rows):
    lines = ["     s         h    a        a_val       N_T     table   ratio  ok"]
    for c in rows:
        lines.append(f"{c.s:6.2f}  {c.h:8.6f}  {c.a_label:>3}  {c.a:11.6f}  {c.n_t:8d}  {c.n_t_reference:8d}"
                     f"  {c.ratio:6.3f}  {'yes' if c.within_factor_two else 'NO'}")
    return "\n".join(lines)
