import math

import numpy as np
import pytest

from symmcomp import mesh as M
from symmcomp.errors import HypothesisError, NonConvergenceError
from symmcomp.geometry import WeightParams, weighted_measure
from symmcomp.mesh import ScalarField
from symmcomp.radial import explicit_v
from symmcomp.rearrangement import weighted_Lp_norm
from symmcomp.solver import (
    EnergyFunctional,
    RobinCoefficient,
    RobinForms,
    RobinProblem,
    SolverConfig,
    assemble,
    boundary_trace,
    evaluate_expression,
    flux_balance,
    minimize,
    read_field,
    solve,
)

from conftest import disk, square


def problem(mesh, p=2.0, ell=-1.0, beta=1.0, f=1.0):
    b = beta if isinstance(beta, RobinCoefficient) else RobinCoefficient.constant(beta)
    fld = f if isinstance(f, ScalarField) else ScalarField.constant(mesh, f)
    return RobinProblem(mesh, WeightParams(2, p, ell), fld, b)


def max_error(sol, exact):
    r = np.hypot(*sol.mesh.vertices.T)
    return float(np.max(np.abs(sol.u - exact(r))))


# -- analytic disk solutions -------------------------------------------------

def test_disk_p2_linear_weight_solution():
    errs, hs = [], []
    for h in (0.1, 0.05, 0.025):
        m = disk(h)
        sol = solve(problem(m))
        errs.append(max_error(sol, lambda r: 2 - r))
        hs.append(m.h)
        assert errs[-1] <= 0.5 * m.h
    orders = np.diff(np.log(errs)) / np.diff(np.log(hs))
    assert np.all(orders >= 1.0 - 0.05), orders


@pytest.mark.parametrize("beta0", [0.5, 1.0, 3.0])
def test_disk_p2_classical_solution(beta0):
    m = disk(0.05)
    sol = solve(problem(m, ell=0.0, beta=beta0))
    assert max_error(sol, lambda r: (1 - r * r) / 4 + 1 / (2 * beta0)) < 0.5 * m.h


@pytest.mark.parametrize("p,ell", [(3.0, -1.0), (4.0, -1.5)])
def test_disk_p_greater_than_two_matches_closed_form(p, ell):
    m = disk(0.05)
    sol = solve(problem(m, p=p, ell=ell))
    exact = lambda r: explicit_v(WeightParams(2, p, ell), 1.0, 1.0, r).values  # noqa: E731
    assert max_error(sol, exact) < 0.5 * m.h


def test_zero_source_gives_zero():
    sol = solve(problem(square(0.2), p=3.0, f=0.0))
    assert np.all(sol.u == 0.0)
    assert sol.energy == 0.0


# -- energy functional --------------------------------------------------------

@pytest.fixture(scope="module")
def forms_p3():
    m = M.ellipse(1.0, 0.7, 0.15, center=(0.1, 0.05))
    beta = RobinCoefficient.expression("1 + x**2")
    return RobinForms(m, WeightParams(2, 3.0, -1.0), beta)


def test_energy_gradient_matches_finite_differences(forms_p3, rng):
    b = forms_p3.load(ScalarField.constant(forms_p3.mesh, 1.0))
    E = EnergyFunctional(forms_p3, b, eps=1e-2)
    psi = rng.uniform(0.2, 1.0, forms_p3.N)
    d = rng.normal(size=forms_p3.N)
    h = 1e-6
    fd = (E(psi + h * d) - E(psi - h * d)) / (2 * h)
    assert E.gradient(psi) @ d == pytest.approx(fd, rel=1e-6)


def test_energy_hessian_matches_finite_differences(forms_p3, rng):
    b = forms_p3.load(ScalarField.constant(forms_p3.mesh, 1.0))
    E = EnergyFunctional(forms_p3, b, eps=1e-2)
    psi = rng.uniform(0.2, 1.0, forms_p3.N)
    d = rng.normal(size=forms_p3.N)
    h = 1e-6
    fd = (E.gradient(psi + h * d) - E.gradient(psi - h * d)) / (2 * h)
    assert np.allclose(E.hessian(psi) @ d, fd, rtol=1e-5, atol=1e-7 * np.abs(fd).max())


def test_energy_is_convex_along_random_lines(forms_p3, rng):
    b = forms_p3.load(ScalarField.constant(forms_p3.mesh, 1.0))
    E = EnergyFunctional(forms_p3, b, eps=1e-3)
    for _ in range(5):
        a, c = rng.normal(size=(2, forms_p3.N))
        vals = [E(a + t * (c - a)) for t in np.linspace(0, 1, 9)]
        assert np.all(np.diff(vals, 2) >= -1e-10 * max(map(abs, vals)))


def test_energy_at_zero_and_constants(forms_p3):
    m = forms_p3.mesh
    area = m.areas.sum()
    zero = np.zeros(forms_p3.N)
    E0 = EnergyFunctional(forms_p3, np.zeros(forms_p3.N), eps=0.0)
    assert E0(zero) == 0.0
    eps = 1e-2
    Ee = EnergyFunctional(forms_p3, np.zeros(forms_p3.N), eps=eps)
    assert Ee(zero) == pytest.approx(eps ** 3 * area / 3, rel=1e-12)
    # ψ ≡ 1 and f ≡ 0: boundary term plus the ε contribution
    tr = boundary_trace(ScalarField.constant(m, 1.0))
    beta_int = tr.integrate(forms_p3.beta(tr.xy, tr.edge))
    one = np.ones(forms_p3.N)
    assert Ee(one) == pytest.approx(beta_int / 3 + eps ** 3 * area / 3, rel=1e-10)


def test_p2_energy_is_the_quadratic_form():
    m = square(0.2)
    pr = problem(m, beta=RobinCoefficient.expression("2 + y"))
    E = assemble(pr)
    F = E.forms
    A = (F.stiffness() + F.robin_mass()).toarray()
    psi = np.random.default_rng(7).normal(size=F.N)
    assert E(psi) == pytest.approx(0.5 * psi @ A @ psi - E.b @ psi, rel=1e-12)


def test_minimize_energy_is_monotone(forms_p3):
    b = forms_p3.load(ScalarField.constant(forms_p3.mesh, 1.0))
    E = EnergyFunctional(forms_p3, b, eps=1e-3)
    u, it, res, energies, residuals = minimize(E, np.zeros(forms_p3.N), 1e-9)
    assert np.all(np.diff(energies) <= 1e-14 * abs(energies[0]))
    assert energies[-1] < E(np.zeros(forms_p3.N))
    assert res <= 1e-9


# -- solve properties -----------------------------------------------------------

@pytest.fixture(scope="module")
def square_var_p3():
    m = square(0.1)
    pr = problem(m, p=3.0, beta=RobinCoefficient.expression("1 + x**2"),
                 f=ScalarField.from_function(m, lambda x, y: np.exp(-x * x - 2 * y * y)))
    return pr, solve(pr)


def test_solution_is_nonnegative(square_var_p3):
    pr, sol = square_var_p3
    assert sol.u.min() >= -1e-7
    assert sol.energy < 0


def test_flux_balance_holds(square_var_p3):
    pr, sol = square_var_p3
    lhs, rhs = flux_balance(pr, sol)
    assert lhs == pytest.approx(rhs, rel=1e-6)


def test_flux_balance_p2_disk():
    pr = problem(disk(0.05))
    lhs, rhs = flux_balance(pr, solve(pr))
    assert lhs == pytest.approx(rhs, rel=1e-9)
    assert rhs == pytest.approx(weighted_measure(pr.mesh, -1.0), rel=1e-12)


def test_eps_continuation_trace(square_var_p3):
    _, sol = square_var_p3
    eps = [e for e, *_ in sol.eps_trace]
    assert eps[0] == 1e-2 and eps[-1] == 1e-6
    assert np.all(np.diff(eps) < 0)
    assert sol.residual <= 1e-7


def test_eps_robustness():
    m = square(0.1)
    pr = problem(m, p=3.0, beta=RobinCoefficient.expression("1 + x**2"))
    a = solve(pr, SolverConfig(eps_min=1e-6))
    b = solve(pr, SolverConfig(eps_min=5e-7))
    na = weighted_Lp_norm(a.field, pr.params, 3.0)
    nb = weighted_Lp_norm(b.field, pr.params, 3.0)
    assert abs(na - nb) <= 1e-6 * na


def test_non_convergence_reports_history():
    pr = problem(square(0.1), p=3.0)
    with pytest.raises(NonConvergenceError) as info:
        solve(pr, SolverConfig(max_newton=1))
    assert len(info.value.history) >= 1


def test_hypothesis_errors():
    m = square(0.25)
    with pytest.raises(HypothesisError, match=r"\(H3\)"):
        solve(problem(m, beta=RobinCoefficient.expression("x")))
    with pytest.raises(HypothesisError, match=r"\(H4\)"):
        solve(problem(m, f=ScalarField.from_function(m, lambda x, y: x)))
    with pytest.raises(HypothesisError, match=r"\(H2\)"):
        solve(problem(m, ell=-2.5))
    with pytest.raises(HypothesisError, match=r"\(H1\)"):
        solve(problem(m, p=1.5))
    flags = problem(m, beta=RobinCoefficient.expression("x")).hypotheses()
    assert flags == {"H1": True, "H2": True, "H3": False, "H4": True}


# -- boundary trace and serialisation ------------------------------------------

def test_trace_of_radial_solution_is_constant():
    sol = solve(problem(disk(0.05)))
    tr = boundary_trace(sol)
    assert np.ptp(tr.values) < 1e-3
    assert np.mean(tr.values) == pytest.approx(1.0, abs=5e-3)
    assert tr.arclength[-1] == pytest.approx(2 * math.pi, rel=1e-3)
    assert np.all(np.diff(tr.arclength) >= 0)


def test_trace_integrates_boundary_length():
    m = square(0.1)
    tr = boundary_trace(ScalarField.constant(m, 1.0))
    assert tr.integrate(np.ones_like(tr.values)) == pytest.approx(8.0, rel=1e-13)


def test_field_and_csv_round_trip(tmp_path):
    m = square(0.2)
    sol = solve(problem(m))
    sol.write_field(tmp_path / "u.field")
    back = read_field(m, tmp_path / "u.field")
    assert np.array_equal(back.values, sol.u)
    sol.to_csv(tmp_path / "u.csv")
    rows = (tmp_path / "u.csv").read_text().splitlines()
    assert rows[0] == "vertex,x,y,u" and len(rows) == m.n_vertices + 1
    assert float(rows[5].split(",")[3]) == sol.u[4]
    with pytest.raises(ValueError, match="bad field header"):
        read_field(square(0.1), tmp_path / "u.field")


# -- coefficients ------------------------------------------------------------

def test_coefficient_kinds_agree():
    m = square(0.2)
    rule = m.edge_rule(0.0)
    expr = RobinCoefficient.expression("1 + x**2")
    func = RobinCoefficient.from_callable(lambda x, y: 1 + x * x)
    assert np.array_equal(expr(rule.xy), func(rule.xy))
    table = RobinCoefficient.table(np.full(len(m.boundary), 2.0))
    assert np.all(table(rule.xy, rule.elem) == 2.0)
    assert table.bounds(m) == (2.0, 2.0)
    assert expr.bounds(m) == pytest.approx((1.0, 2.0))
    with pytest.raises(ValueError, match="edge indices"):
        table(rule.xy)


def test_expression_evaluation():
    x = np.array([1.0, 0.0])
    y = np.array([0.0, 2.0])
    assert np.allclose(evaluate_expression("r", x, y), [1.0, 2.0])
    assert np.allclose(evaluate_expression("theta", x, y), [0.0, math.pi / 2])
    assert np.allclose(evaluate_expression("3", x, y), [3.0, 3.0])
    with pytest.raises(ValueError, match="cannot evaluate"):
        evaluate_expression("__import__('os')", x, y)
    with pytest.raises(ValueError, match="cannot evaluate"):
        RobinCoefficient.expression("1 +")


def test_variable_beta_solution_differs_from_constant():
    m = square(0.1)
    a = solve(problem(m, beta=1.0))
    b = solve(problem(m, beta=RobinCoefficient.expression("1 + x**2")))
    # larger β pulls the trace down
    assert b.u.max() < a.u.max()
