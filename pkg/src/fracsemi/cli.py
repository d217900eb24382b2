"""Command line entry point: ``fracsemi {solve,study,cost-report,selftest}``."""
import argparse
import sys

from .errors import DomainError, NumericalError, UsageError
from .experiments import (CASES, RunConfig, cost_report, emit_csv, format_cost_report, load_config, parse_number,
                          run_case)


def _float_list(text):
    return tuple(parse_number(v) for v in text.split(",") if v.strip())


def _a_value(text):
    return "opt" if text.lower() in ("opt", "aopt") else parse_number(text)


def build_parser():
    p = argparse.ArgumentParser(prog="fracsemi", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="run one case at one or more (s, h) points")
    sp.add_argument("--case", required=True, choices=CASES)
    sp.add_argument("--s", type=_float_list, help="fractional order(s), comma separated")
    sp.add_argument("--r", type=float)
    sp.add_argument("--h", type=_float_list, help="mesh size(s), comma separated; 2^-5 is accepted")
    sp.add_argument("--a", type=_a_value, help="time step exponent (dt = h^a) or 'opt'")
    sp.add_argument("--k", type=int)
    sp.add_argument("--theta", type=float)
    sp.add_argument("--bc", help="boundary condition(s) for step1d_bcs")
    sp.add_argument("--kappa", type=float)
    sp.add_argument("--out", default="-", help="CSV path ('-' for stdout)")

    st = sub.add_parser("study", help="run a convergence study from a config file")
    st.add_argument("config")
    st.add_argument("--out", help="override the config's output path")

    cr = sub.add_parser("cost-report", help="compare time-node counts with the reference table")
    cr.add_argument("--safety", type=float, default=1.01)

    sub.add_parser("selftest", help="run the built-in property checks")
    return p


def _print_slopes(table, stream):
    for (case, s), (slope, resid) in sorted(table.slopes.items()):
        print(f"# {case} s={s:g}: slope {slope:.3f} (residual {resid:.2g})", file=stream)
    for row in table.rows:
        if row.message:
            print(f"# {row.case} s={row.s:g} h={row.h:g}: {row.message}", file=stream)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            bc = tuple(args.bc.split(",")) if args.bc else None
            cfg = RunConfig.for_case(args.case, s=args.s, r=args.r, h=args.h, a=args.a, k=args.k,
                                     theta=args.theta, bc=bc, kappa=args.kappa)
            table = run_case(cfg, study=False)
            emit_csv(table, args.out)
            _print_slopes(table, sys.stderr)
            return 0 if all(r.ok for r in table.rows) else 1
        if args.command == "study":
            cfg = load_config(args.config)
            table = run_case(cfg)
            emit_csv(table, args.out or cfg.out or "-")
            _print_slopes(table, sys.stderr)
            return 0 if all(r.ok for r in table.rows) else 1
        if args.command == "cost-report":
            rows = cost_report(safety=args.safety)
            print(format_cost_report(rows))
            return 0 if all(r.within_factor_two for r in rows) else 1
        from .selftest import run_all
        return 0 if run_all() else 1
    except (DomainError, UsageError, NumericalError, OSError) as exc:
        print(f"fracsemi: error: {exc}", file=sys.stderr)
        return 2
