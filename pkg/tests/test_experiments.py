import csv
import json
import math

import numpy as np
import pytest

from concavity_lab import cli
from concavity_lab.convexity import SearchOptions
from concavity_lab.domain import ConvexDomain
from concavity_lab.experiments import (
    ExperimentSpec,
    TheoremReport,
    property_suite,
    emit_report,
    load_spec,
    run,
    solve_power,
)
from concavity_lab.fields import read_field_csv
from concavity_lab.solver import SolverError, solve_poisson

from conftest import disk_mask

SQUARE = ConvexDomain.rectangle(-1, 1, -1, 1)
REPORTS = []


def go(preset, h=1 / 16, domain=None, **params):
    spec = ExperimentSpec(preset, domain or ConvexDomain.disk(), h=h, params=params)
    r = run(spec)
    REPORTS.append(r)
    return r


def names(r):
    return {c.name: c for c in r.hypotheses}


def test_unknown_preset():
    with pytest.raises(ValueError):
        run(ExperimentSpec("nope"))


def test_verdict_requires_hypotheses():
    r = TheoremReport("x")
    r.check("a", False)
    assert r.finish(True).verdict == "rejected"
    r = TheoremReport("x")
    r.check("a", True)
    assert r.finish(False).verdict == "fail" and r.finish(True).verdict == "pass"


# -- torsion and eigen ----------------------------------------------------------------------

def test_torsion_disk():
    r = go("torsion", 1 / 32)
    assert r.verdict == "pass"
    assert r.measurements["residual"] <= 1e-10
    assert abs(r.measurements["max_u"] - 0.25) <= 2 / 32**2
    # the disk torsion function is itself concave
    assert r.measurements["untransformed_defect"] <= 1e-12


def test_torsion_square_untransformed_not_concave():
    r = go("torsion", 1 / 16, SQUARE)
    assert r.verdict == "pass"
    assert r.defect["sup_value"] <= 2e-3
    assert r.measurements["untransformed_defect"] > 1e-3


def test_eigen_log_disk_and_square():
    r = go("eigen_log", 1 / 32)
    assert r.verdict == "pass"
    assert abs(r.measurements["lambda1"] - r.measurements["lambda1_exact"]) <= 0.01 * r.measurements["lambda1_exact"]
    s = go("eigen_log", 1 / 16, SQUARE)
    assert s.verdict == "pass"
    assert "eigenvalue_oracle" not in names(s)


# -- power problems -------------------------------------------------------------------------

def test_power_gamma_zero_is_torsion():
    m = disk_mask(1 / 16)
    u, _ = solve_power(m, 0.0)
    t = solve_poisson(m, 1.0)
    assert np.max(np.abs(u.interior_values - t.interior_values)) <= 1e-12


def test_kennington_presets():
    r = go("kennington_power", 1 / 32, gamma=0.5)
    assert r.verdict == "pass" and r.defect["sup_value"] <= 2e-3
    r = go("kennington_power", 1 / 32, gamma=0.9)
    assert r.verdict == "pass" and r.defect["sup_value"] <= 5e-3
    r = go("kennington_power", 1 / 16, gamma=1.2)
    assert r.verdict == "rejected"
    poly = ConvexDomain.polygon([(-1, -1), (1, -1), (0, 1)])
    r = go("kennington_power", 1 / 16, poly, gamma=0.5)
    assert r.verdict == "rejected" and not names(r)["interior_ball"].passed


def test_power_perturbed_zero_reproduces_unperturbed():
    m = disk_mask(1 / 16)
    r = go("power_perturbed", 1 / 16, g="zero", eps=[0.0])
    u0, _ = solve_power(m, 0.5)
    assert r.sweep[0]["delta"] == 0.0
    assert np.array_equal(r.fields["u_eps0"].values, u0.values, equal_nan=True)
    k = go("kennington_power", 1 / 16, gamma=0.5)
    assert r.verdict == k.verdict == "pass"


def test_power_perturbed_scaling_design():
    r = go("power_perturbed", 1 / 16, g="ramp", eps=[1e-1, 1e-2])
    d = [row["delta"] for row in r.sweep]
    assert d[0] > 0 and abs(d[0] / d[1] - 10) < 1e-6
    assert r.hypotheses_ok
    # witness distance non-decreasing in the measured delta
    rows = sorted(r.sweep, key=lambda row: row["delta"])
    w = [row["witness_distance"] for row in rows]
    assert all(a <= b + 1e-15 for a, b in zip(w, w[1:]))
    assert all(row["m"] <= r.measurements["m0"] * (1 + 1e-9) for row in r.sweep)


def test_power_perturbed_gates():
    r = go("power_perturbed", 1 / 16, g="sine", eps=[1e-2])
    assert r.verdict == "rejected" and not names(r)["g_increasing[eps=0.01]"].passed
    r = go("power_perturbed", 1 / 16, g="ramp", eps=[2.0])
    c = names(r)["g_le_bound[eps=2.0]"]
    assert r.verdict == "rejected" and not c.passed and 0 < c.value
    r = go("power_perturbed", 1 / 16, g="ramp", eps=[1e-2], mu=0.01)
    assert r.verdict == "rejected"


# -- log-concavity ---------------------------------------------------------------------------

def test_log_concave_runs_on_disk():
    r = go("log_concave", 1 / 16, g="log1p", eps=[1.0, 0.5])
    assert r.hypotheses_ok
    assert all(row["c"] > 0 and row["delta"] >= 0 for row in r.sweep)
    assert r.verdict == "pass"
    assert r.beta is not None and r.beta >= min(row["c"] for row in r.sweep) - 1e-9


def test_log_concave_gates():
    r = go("log_concave", 1 / 16, g="const")
    assert r.verdict == "rejected" and not names(r)["g_prime_t_ge_c_probe[eps=1.0]"].passed
    r = go("log_concave", 1 / 16, SQUARE)
    assert r.verdict == "rejected" and not names(r)["strictly_convex_domain"].passed


# -- source problem -------------------------------------------------------------------------

def test_source_reduces_to_torsion():
    r = go("source_perturbed", 1 / 16, gamma=1.0, f="one", g="zero")
    assert r.verdict == "pass" and r.defect["sup_value"] <= 2e-3
    assert r.measurements["exponent"] == pytest.approx(1 / 3)
    t = solve_poisson(disk_mask(1 / 16), 1.0)
    assert np.max(np.abs(r.fields["u_eps0"].interior_values - t.interior_values)) <= 1e-10


def test_source_harmonic_concave_path():
    r = go("source_perturbed", 1 / 16, gamma=1.0, f="bump", g="harmonic_convex", g_level=0.2)
    assert r.hypotheses_ok and r.delta <= 1e-15 and r.verdict == "pass"
    assert "conditionally valid" in names(r)["f_ge_m_power_g[eps=0.0]"].detail


def test_source_perturbed_sweep_and_gates():
    r = go("source_perturbed", 1 / 16, gamma=2.0, g="perturbed", g_level=0.5, eps=[1e-1, 1e-2])
    assert r.hypotheses_ok
    d = [row["delta"] for row in r.sweep]
    assert d[1] > 0 and abs(d[0] / d[1] - 10) < 1e-9
    r = go("source_perturbed", 1 / 16, gamma=0.5)
    assert r.verdict == "rejected"
    # constant f and g satisfy f >= m^p g automatically at the maximum; g growing
    # towards the boundary does not
    r = go("source_perturbed", 1 / 16, gamma=1.0, g="harmonic_convex", g_level=5.0)
    assert r.verdict == "rejected" and not names(r)["f_ge_m_power_g[eps=0.0]"].passed
    # a concave g has HC_g > 0 and so a positive measured delta
    r = go("source_perturbed", 1 / 16, gamma=1.0, g="concave", g_level=0.2)
    assert r.delta > 0


# -- perturbation rate -----------------------------------------------------------------------

def test_perturbation_rate_small():
    r = go("perturbation_rate", 1 / 16)
    assert r.hypotheses_ok
    assert r.measurements["distance_monotone"]
    assert r.measurements["floor"] > 0
    if r.measurements["floor_dominated"]:
        assert any("floor" in n for n in r.notes)
    else:
        assert 0.4 <= r.measurements["exponent"] <= 0.6
    assert r.verdict == "pass"


def test_pass_implies_hypotheses():
    assert REPORTS
    for r in REPORTS:
        if r.verdict == "pass":
            assert r.hypotheses_ok


# -- configuration and reports ---------------------------------------------------------------

def test_load_spec(tmp_path):
    cfg = tmp_path / "e.ini"
    cfg.write_text(
        "[experiment]\npreset = kennington_power\nseed = 7\nout = res\n"
        "[domain]\nkind = ellipse\nsemi_axes = 1.0, 0.5\n"
        "[grid]\nh = 1/16\n"
        "[search]\nlambda_steps = 8\nstride = 2\nlocal_radius = 3\n"
        "[params]\ngamma = 0.25\neps = 0.1, 0.01\nrefine = yes\n"
    )
    s = load_spec(cfg)
    assert s.preset == "kennington_power" and s.seed == 7 and s.out == "res"
    assert s.domain.kind == "ellipse" and s.h == pytest.approx(1 / 16)
    assert s.search.lambda_steps == 8 and s.search.stride == 2 and s.search.local_radius == 3
    assert s.params["gamma"] == 0.25 and s.params["refine"] is True
    assert load_spec(cfg, "torsion").preset == "torsion"
    rect = tmp_path / "r.ini"
    rect.write_text("[domain]\nkind = rectangle\nbounds = 0, 2, 0, 1\n")
    d = load_spec(rect, "torsion").domain
    assert d.kind == "polygon" and d.bounds == (0.0, 2.0, 0.0, 1.0)


def test_emit_report_round_trip(tmp_path):
    spec = ExperimentSpec("torsion", h=1 / 16, search=SearchOptions(lambda_steps=4, record=True))
    r = run(spec)
    paths = emit_report(r, tmp_path)
    d = json.loads(open(paths["report"]).read())
    assert TheoremReport.from_dict(d).to_dict() == r.to_dict()
    assert d == json.loads(json.dumps(r.to_dict(), sort_keys=True))
    u = read_field_csv(paths["u"])
    assert np.allclose(u.interior_values, r.fields["u"].interior_values, rtol=0, atol=0)
    with open(paths["table_sqrt_u"]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["node1", "node3", "lambda_index", "value"]
    assert len(rows) - 1 == r.defect["evaluations"]


def test_report_json_handles_infinities():
    r = TheoremReport("x", measurements={"a": math.inf, "b": float("nan"), "c": np.float64(1.5)})
    d = r.to_dict()
    assert d["measurements"] == {"a": "inf", "b": "nan", "c": 1.5}
    json.dumps(d)


def test_sweep_csv(tmp_path):
    r = go("power_perturbed", 1 / 16, g="ramp", eps=[1e-1, 1e-2])
    paths = emit_report(r, tmp_path, write_fields=False)
    with open(paths["sweep"]) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and float(rows[0]["eps"]) == 0.1


def test_property_suite_small():
    rows = property_suite(samples=5000, seed=3)
    assert [r["name"] for r in rows] == ["subadditivity_sum", "subadditivity_difference", "ratio_convexity_excess",
                                         "inverse_convexity_margin", "hc_minus_c_min"]
    assert all(r["passed"] and r["admissible"] > 0 for r in rows)


# -- command line -----------------------------------------------------------------------------

def test_cli_run_and_envelope(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "torsion", "--grid", "16", "--out", str(out), "--lambda-steps", "8"]) == 0
    printed = capsys.readouterr().out
    assert "wrote" in printed and '"verdict": "pass"' in printed
    assert cli.main(["envelope", str(out / "torsion_sqrt_u.csv")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["gap"] <= 1e-3


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "sq.ini"
    cfg.write_text("[domain]\nkind = rectangle\nbounds = -1, 1, -1, 1\n[grid]\nh = 1/16\n")
    assert cli.main(["run", "log_concave", "--config", str(cfg)]) == 1
    assert '"name": "strictly_convex_domain"' in capsys.readouterr().out
    bad = tmp_path / "bad.ini"
    bad.write_text("[domain]\nkind = hexagon\n")
    assert cli.main(["run", "torsion", "--config", str(bad)]) == 1
    strict = tmp_path / "tight.ini"
    strict.write_text("[grid]\nh = 1/16\n[params]\ntol = -1\n")
    assert cli.main(["run", "torsion", "--config", str(strict)]) == 2

    def boom(spec):
        raise SolverError("no convergence")

    monkeypatch.setattr(cli, "run", boom)
    assert cli.main(["run", "torsion", "--grid", "8"]) == 3
    assert cli.main(["verify-appendix", "--samples", "2000", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5
    with pytest.raises(FileNotFoundError):
        cli.main(["envelope", str(tmp_path / "missing.csv")])
