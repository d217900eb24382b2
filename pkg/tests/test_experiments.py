import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracsemi.cli import main
from fracsemi.errors import DomainError, UsageError
from fracsemi.experiments import (CASES, CSV_FIELDS, REFERENCE_NODE_COUNTS, ConvergenceTable, Row, RunConfig,
                                  cost_report, emit_csv, fit_slope, format_cost_report, load_config, parse_config,
                                  parse_number, read_csv, run_case)


def test_fit_slope_exact_power_laws():
    hs = 2.0 ** -np.arange(3, 8)
    slope, resid = fit_slope([(h, 3.0 * h ** 2) for h in hs])
    assert slope == pytest.approx(2.0, abs=1e-12) and resid < 1e-12
    assert fit_slope([(h, 0.1 * h ** 0.6) for h in hs])[0] == pytest.approx(0.6, abs=1e-12)


def test_fit_slope_uses_last_four_points():
    hs = 2.0 ** -np.arange(3, 9)
    errs = [1.0, 1.0] + [h ** 1.5 for h in hs[2:]]
    assert fit_slope(list(zip(hs, errs)))[0] == pytest.approx(1.5)
    assert fit_slope([(0.5, 0.25), (0.25, 0.0625)])[0] == pytest.approx(2.0)


@pytest.mark.parametrize("seed", range(20))
def test_fit_slope_noisy(seed):
    rng = np.random.default_rng(seed)
    hs = 2.0 ** -np.arange(3, 10)
    errs = 2.0 * hs ** 2 * (1 + 0.05 * rng.uniform(-1, 1, hs.size))
    assert 1.9 <= fit_slope(list(zip(hs, errs)))[0] <= 2.1


@pytest.mark.parametrize("pts", [[(0.5, 1.0)], [(0.5, 0.0), (0.25, 1.0)], [(-0.5, 1.0), (0.25, 1.0)]])
def test_fit_slope_rejects(pts):
    with pytest.raises(DomainError):
        fit_slope(pts)


def test_parse_number():
    assert parse_number("2^-3") == 0.125
    assert parse_number(" 0.5 ") == 0.5


def test_config_parsing():
    cfg = parse_config("""
        # full-method study
        case = eig1d
        s = 0.1, 0.5
        h = 2^-3, 2^-4, 2^-5, 2^-6
        a = opt
        theta = 0.5   # Crank-Nicolson
        out = results.csv
    """)
    assert cfg.case == "eig1d" and cfg.s == (0.1, 0.5) and cfg.h == (0.125, 0.0625, 0.03125, 0.015625)
    assert cfg.a == "opt" and cfg.a_for(0.5) == pytest.approx(2 / 1.25)
    assert cfg.out == "results.csv" and cfg.r == 1.5
    cfg.validate_study()


@pytest.mark.parametrize("text", ["s = 0.5", "case = eig1d\nbogus = 1", "case = eig1d\ns 0.5",
                                  "case = eig1d\nk = two", "case = nope"])
def test_config_errors(text):
    with pytest.raises((UsageError, DomainError)):
        parse_config(text)


def test_study_validation():
    with pytest.raises(UsageError):
        RunConfig.for_case("eig1d", h=(0.5, 0.25, 0.125)).validate_study()
    with pytest.raises(UsageError):
        RunConfig.for_case("eig1d", h=(0.5, 0.25, 0.25, 0.125)).validate_study()
    for case in CASES:
        cfg = RunConfig.for_case(case)
        assert len(cfg.h) >= 4
        cfg.validate_study()


def _row(**kw):
    base = dict(case="eig1d", s=0.5, r=1.5, k=1, theta=0.5, a=2.0, h=0.125, dt=0.015625, N_T=12,
                error_l2=1e-3, slope=2.0, wall_ms=1.5)
    base.update(kw)
    return Row(**base)


def test_emit_empty_and_one_row(tmp_path):
    p = tmp_path / "t.csv"
    emit_csv(ConvergenceTable(), p)
    assert p.read_text() == ",".join(CSV_FIELDS) + "\n"
    emit_csv(ConvergenceTable([_row()]), p)
    lines = p.read_text().split("\n")
    assert len(lines) == 3 and lines[-1] == ""
    assert lines[1].startswith("eig1d,0.5,1.5,1,0.5,2,0.125,0.015625,12,")
    assert not (tmp_path / "t.csv.meta.json").exists()


def test_emit_writes_meta_sidecar(tmp_path):
    p = tmp_path / "t.csv"
    emit_csv(ConvergenceTable([_row()], meta={"epsilon": 0.01}), p)
    assert json.loads((tmp_path / "t.csv.meta.json").read_text()) == {"epsilon": 0.01}


def test_emit_to_stdout(capsys):
    emit_csv(ConvergenceTable([_row()]), "-")
    assert capsys.readouterr().out.startswith("case,s,r,")


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(finite, finite, finite, st.integers(0, 10 ** 9)), min_size=0, max_size=6))
def test_csv_round_trip(tmp_path_factory, recs):
    rows = [_row(s=a, h=b, error_l2=c, N_T=n, dt=a * b if math.isfinite(a * b) else 0.0) for a, b, c, n in recs]
    p = tmp_path_factory.mktemp("rt") / "t.csv"
    emit_csv(ConvergenceTable(rows), p)
    back = read_csv(p).rows
    assert len(back) == len(rows)
    for x, y in zip(rows, back):
        for f in CSV_FIELDS:
            assert getattr(x, f) == getattr(y, f)


def test_read_csv_rejects_foreign_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(UsageError):
        read_csv(p)


def test_cost_report():
    rows = cost_report()
    assert len(rows) == 36
    ref = {(c.s, c.h, c.a_label): c for c in rows}
    assert ref[(0.5, 0.1, "2")].n_t_reference == 51
    assert ref[(0.9, 0.003125, "opt")].n_t_reference == 407
    assert all(c.within_factor_two for c in rows)
    for s, by_h in REFERENCE_NODE_COUNTS.items():
        ratios = [ref[(s, h, "2")].n_t / ref[(s, h, "opt")].n_t for h in sorted(by_h, reverse=True)]
        assert all(b > a for a, b in zip(ratios, ratios[1:]))
    text = format_cost_report(rows)
    assert text.count("\n") == 36 and "NO" not in text


def test_run_case_records_failures():
    cfg = RunConfig.for_case("eig1d", s=(0.5,), h=(0.3, 0.125), theta=1.0)
    table = run_case(cfg, study=False)
    assert all(not r.ok and "UsageError" in r.message for r in table.rows)
    assert all(math.isnan(r.error_l2) for r in table.rows)
    assert table.slopes == {}


def test_run_case_is_deterministic():
    cfg = RunConfig.for_case("step1d_bcs", bc=("neumann",), h=(0.125, 0.0625), reference_modes=2048)
    a = run_case(cfg, study=False)
    b = run_case(cfg, study=False)
    assert [r.error_l2 for r in a.rows] == [r.error_l2 for r in b.rows]
    assert a.rows[0].case == "step1d_bcs/neumann"
    assert a.meta["r"] == 0.45


def test_metadata_records_choices():
    t = run_case(RunConfig.for_case("singular1d", s=(0.5,), h=(0.125, 0.0625), h_ref=2.0 ** -8), study=False)
    assert t.meta["epsilon"] == 0.01
    assert t.meta["h_ref"] == 2.0 ** -8
    assert all(r.ok for r in t.rows)


def test_cli_solve_to_file(tmp_path, capsys):
    out = tmp_path / "o.csv"
    code = main(["solve", "--case", "eig1d", "--s", "0.5", "--h", "2^-3,2^-4", "--out", str(out)])
    assert code == 0
    rows = read_csv(out).rows
    assert [r.h for r in rows] == [0.125, 0.0625]
    assert "slope" in capsys.readouterr().err


def test_cli_study(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("case = quad_only\ns = 0.5\nh = 2^-3, 2^-4, 2^-5, 2^-6\n")
    assert main(["study", str(cfg), "--out", str(tmp_path / "q.csv")]) == 0
    assert len(read_csv(tmp_path / "q.csv").rows) == 4


def test_cli_errors(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("case = eig1d\nh = 0.5, 0.25\n")
    assert main(["study", str(cfg)]) == 2
    assert main(["study", str(tmp_path / "missing.cfg")]) == 2
    assert main(["solve", "--case", "eig1d", "--h", "0.3"]) == 1
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["solve", "--case", "nope"])


def test_cli_cost_report_and_selftest(capsys):
    assert main(["cost-report"]) == 0
    assert "407" in capsys.readouterr().out
    assert main(["selftest"]) == 0


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "fracsemi", "cost-report"], capture_output=True, text=True,
                         env=dict(os.environ))
    assert out.returncode == 0 and "ratio" in out.stdout


def test_shipped_configs_cover_every_case():
    paths = sorted((Path(__file__).parent.parent / "configs").glob("*.cfg"))
    seen = set()
    for p in paths:
        cfg = load_config(p).validate_study()
        assert cfg == RunConfig.for_case(cfg.case, out=cfg.out)
        seen.add(cfg.case)
    assert seen == set(CASES)
