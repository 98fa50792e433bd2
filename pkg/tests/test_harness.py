import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symmcomp.geometry import WeightParams
from symmcomp.harness import (
    ComparisonReport,
    GronwallInstance,
    HarnessConfig,
    Pipeline,
    compare_golden,
    radial_distribution,
    refinement_consistent,
    verify_faber_krahn,
    verify_flux,
    verify_gronwall,
    verify_minima,
    verify_norm_comparison,
    verify_pointwise_comparison,
    write_golden,
)
from symmcomp.mesh import ScalarField
from symmcomp.radial import explicit_v
from symmcomp.solver import RobinCoefficient, RobinProblem

from conftest import disk, square

FAST = HarnessConfig(lorentz=False)


def problem(mesh, p=2.0, ell=-1.0, beta="1", f=None):
    fld = ScalarField.constant(mesh, 1.0) if f is None else ScalarField.from_function(mesh, f)
    return RobinProblem(mesh, WeightParams(2, p, ell), fld, RobinCoefficient.expression(beta))


@pytest.fixture(scope="module")
def disk_pipeline():
    pr = problem(disk(0.05))
    return Pipeline.run(pr, FAST)


@pytest.fixture(scope="module")
def square_pipeline():
    pr = problem(square(0.1), beta="1 + x**2")
    return Pipeline.run(pr, FAST)


# -- report plumbing --------------------------------------------------------

def test_report_pass_flag_follows_margins():
    rep = ComparisonReport("x", 0.1, {"H1": True, "H2": True})
    rep.add("a", 1.0, 2.0, 0.0)
    assert rep.passed and rep.status == "pass"
    rep.add("b", 2.0, 1.99, 0.02)
    assert rep.passed
    rep.add("c", 2.0, 1.0, 0.5)
    assert not rep.passed and rep.status == "fail"
    rep.add("d", 5.0, 0.0, 0.0, informational=True)
    assert rep.margin("c") == -1.0


def test_failing_hypothesis_downgrades_to_informational():
    rep = ComparisonReport("x", 0.1, {"H1": True, "H2": False})
    rep.add("a", 2.0, 1.0, 0.0)
    assert rep.status == "informational"


def test_report_serialisation_is_complete():
    rep = ComparisonReport("exp", 0.05, {"H2": True, "H1": True}, info={"v": np.float64(1.5), "w": math.inf})
    rep.add("a", 1.0, 3.0, 0.1)
    d = json.loads(rep.to_json())
    assert list(d["hypotheses"]) == ["H1", "H2"]
    assert d["checks"][0] == {"name": "a", "lhs": 1.0, "rhs": 3.0, "margin": 2.0, "tol": 0.1,
                              "informational": False, "passed": True}
    assert d["info"] == {"v": 1.5, "w": "inf"}
    lines = rep.to_csv().splitlines()
    assert lines[0].startswith("experiment,check,lhs,rhs,margin") and len(lines) == 2


def test_refinement_consistency():
    a = ComparisonReport("x", 0.1, {})
    a.add("m", 0.0, 1.0, 0.1)
    b = ComparisonReport("x", 0.05, {})
    b.add("m", 0.0, 0.95, 0.05)
    assert refinement_consistent(a, b) == {"m": True}
    c = ComparisonReport("x", 0.05, {})
    c.add("m", 0.0, 0.8, 0.05)
    assert refinement_consistent(a, c) == {"m": False}


def test_golden_round_trip(tmp_path):
    rep = ComparisonReport("g/one", 0.1, {})
    rep.add("m", 1.0, 2.0, 0.0)
    assert compare_golden(rep, tmp_path) == []
    write_golden(rep, tmp_path)
    assert compare_golden(rep, tmp_path) == []
    moved = ComparisonReport("g/one", 0.1, {})
    moved.add("m", 1.0, 2.1, 0.0)
    assert len(compare_golden(moved, tmp_path)) == 1


def test_radial_distribution_of_linear_profile():
    P = WeightParams(2, 2, -1)
    v = explicit_v(P, 1.0, 1.0)  # 2 - r
    mu = radial_distribution(v)
    t = np.array([0.0, 0.5, 1.0, 1.25, 1.9, 2.0, 2.5])
    expected = 2 * np.pi * np.clip(2 - t, 0, 1)
    assert np.allclose(mu(t), expected, atol=1e-9)
    assert mu.total == pytest.approx(2 * np.pi)


# -- equality configuration -----------------------------------------------------

def test_equality_configuration_margins_vanish(disk_pipeline):
    pl = disk_pipeline
    pr = pl.problem
    h = pr.mesh.h
    norms = verify_norm_comparison(pr, FAST, pipeline=pl)
    assert norms.status == "pass"
    for c in norms.checks:
        assert abs(c.margin) <= c.tol
    pw = verify_pointwise_comparison(pr, FAST, pipeline=pl)
    assert pw.status == "pass"
    assert abs(pw.checks[0].margin) <= FAST.pointwise_tol(h)
    mins = verify_minima(pl.u, pl.v, FAST.pointwise_tol(h))
    assert abs(mins.checks[0].margin) <= FAST.pointwise_tol(h)


def test_flux_report(disk_pipeline, square_pipeline):
    for pl in (disk_pipeline, square_pipeline):
        rep = verify_flux(pl)
        assert rep.status == "pass"
        assert set(rep.hypotheses) == {"H1", "H2", "H3", "H4"}


# -- non-radial configuration -------------------------------------------------

def test_square_variable_beta_norms(square_pipeline):
    rep = verify_norm_comparison(square_pipeline.problem, FAST, pipeline=square_pipeline)
    assert rep.status == "pass"
    assert all(c.margin > 0 for c in rep.checks)
    assert rep.info["beta_tilde"] == pytest.approx(1.0, abs=1e-12)


def test_square_pointwise_and_minima(square_pipeline):
    pl = square_pipeline
    rep = verify_pointwise_comparison(pl.problem, FAST, pipeline=pl)
    assert rep.status == "pass"
    assert rep.info["grid_points"] > 1000
    assert verify_minima(pl.u, pl.v).checks[0].margin > 0


def test_lorentz_rows_are_informational():
    pr = problem(square(0.2))
    rep = verify_norm_comparison(pr, HarnessConfig())
    info = [c for c in rep.checks if c.informational]
    assert len(info) == 2 and all(c.name.startswith("Lorentz") for c in info)


def test_pointwise_refused_outside_admissible_range():
    pr = problem(square(0.2), p=2.5, ell=-0.5)
    rep = verify_pointwise_comparison(pr, FAST)
    assert rep.status == "refused"
    assert "condition violated" in rep.info["reason"]
    assert rep.checks == []


def test_pointwise_needs_unit_source():
    pr = problem(square(0.2), f=lambda x, y: 2 + 0 * x)
    with pytest.raises(ValueError, match="f ≡ 1"):
        verify_pointwise_comparison(pr, FAST)


def test_classical_weight_is_informational():
    pr = problem(square(0.2), ell=0.0)
    rep = verify_norm_comparison(pr, FAST)
    assert rep.hypotheses["H2"] is False
    assert rep.status == "informational"


def test_reports_are_deterministic():
    a = verify_norm_comparison(problem(square(0.2), p=3.0, beta="2 + y"), FAST)
    b = verify_norm_comparison(problem(square(0.2), p=3.0, beta="2 + y"), FAST)
    assert a.to_json() == b.to_json()


# -- Faber-Krahn ---------------------------------------------------------------

@pytest.mark.parametrize("beta", ["1", "1 + x**2"])
def test_faber_krahn_square(beta):
    rep = verify_faber_krahn(square(0.1), RobinCoefficient.expression(beta), WeightParams(2, 2, -1))
    assert rep.status == "pass"
    assert rep.checks[0].margin > 0
    assert rep.info["r_sharp"] == pytest.approx(8 * math.log(1 + math.sqrt(2)) / (2 * math.pi), rel=1e-10)


def test_faber_krahn_equality_configuration():
    rep = verify_faber_krahn(disk(0.05), RobinCoefficient.constant(1.0), WeightParams(2, 2, -1))
    assert rep.status == "pass"
    assert abs(rep.info["relative_margin"]) <= 1e-3


def test_faber_krahn_p3():
    rep = verify_faber_krahn(square(0.1), RobinCoefficient.constant(1.0), WeightParams(2, 3, -1))
    assert rep.status == "pass"
    assert rep.info["label_domain"] == "upper bound certified, global minimum heuristic"


# -- Gronwall-type lemma ---------------------------------------------------------

@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.5])
def test_gronwall_extremals_are_equalities(p):
    for inst in (GronwallInstance.power_extremal(p, 0.7), GronwallInstance.affine_extremal(1.3, 2.0, p, 0.4)):
        rep = verify_gronwall(inst)
        assert rep.status == "pass"
        assert rep.equality_gap <= 1e-10


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_gronwall_sampled_instances_pass(seed):
    inst = GronwallInstance.sampled(np.random.default_rng(seed))
    rep = verify_gronwall(inst)
    assert rep.hypothesis_ok
    assert rep.status == "pass"


def test_gronwall_refuses_when_hypothesis_fails():
    # τ ξ' = p τ^p exceeds (p - 1) ξ
    inst = GronwallInstance(lambda t: t**3, lambda t: 3 * t**2, 1.0, 0.0, 3.0, "too-fast")
    assert verify_gronwall(inst).status == "refused"


def test_gronwall_sampled_slack_is_strict():
    inst = GronwallInstance.sampled(np.random.default_rng(3), p=2.5, tau0=1.0)
    rep = verify_gronwall(inst)
    # the bound is attained at τ₀ only, so the slack shows up further out
    assert rep.margin_i >= -rep.tol
    assert rep.equality_gap > 1e-6
