"""Acceptance suite: one test and one summary line per criterion.

Each criterion prints ``[PASS]`` or ``[FAIL]`` with the decisive numbers,
both to stdout (visible with ``-s``) and in the terminal summary.
"""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from symmcomp import mesh as M
from symmcomp.geometry import WeightParams, isoperimetric_check
from symmcomp.harness import (
    GronwallInstance,
    HarnessConfig,
    Pipeline,
    refinement_consistent,
    verify_faber_krahn,
    verify_flux,
    verify_gronwall,
    verify_minima,
    verify_norm_comparison,
    verify_pointwise_comparison,
)
from symmcomp.mesh import ScalarField, TriMesh
from symmcomp.radial import explicit_v, radial_problem, solve_symmetrized
from symmcomp.rearrangement import (
    DistributionCurve,
    cavalieri,
    decreasing_rearrangement,
    default_levels,
    distribution_function,
    hardy_littlewood_check,
    weighted_Lp_norm,
    weighted_rearrangement,
)
from symmcomp.solver import RobinCoefficient, RobinProblem, solve

from conftest import ACCEPTANCE_LINES

CFG = HarnessConfig(lorentz=False)


def record(n: int, ok: bool, text: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {text}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. weighted isoperimetric inequality

def test_criterion_1_isoperimetric():
    worst_disk, monotone = 0.0, True
    for p, ell in [(2, -1), (3, -1), (2, -0.5), (2, 0)]:
        P = WeightParams(2, p, ell)
        rel = [abs(isoperimetric_check(M.disk(1.0, h), P).relative_margin) for h in (0.04, 0.02)]
        worst_disk = max(worst_disk, rel[1])
        monotone &= rel[1] < rel[0]
    others = {
        "square": M.square(1.0, 0.05),
        "off-centre disk": M.disk(0.4, 0.02, center=(0.5, 0.0)),
        "ellipse": M.ellipse(1.0, 0.5, 0.05, center=(0.2, 0.1)),
        "L-shape": M.l_shape(1.0, 0.05, center=(-0.3, -0.25)),
    }
    min_other = min(isoperimetric_check(m, WeightParams(2, p, ell)).margin
                    for m in others.values() for p, ell in [(2, -1), (3, -1), (2, -0.5)])
    ok = worst_disk <= 1e-3 and monotone and min_other > 0
    record(1, ok, f"centred disks max |margin|/lhs = {worst_disk:.2e} at h=0.02 (decreasing: {monotone}); "
                  f"min margin on other domains = {min_other:.4f}")


# ---------------------------------------------------------------------------
# 2. radial solver against the closed form

def test_criterion_2_closed_form():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(10):
        p = float(rng.uniform(2.0, 5.0))
        ell = float(rng.uniform(-1.95, -0.05))
        R = float(rng.uniform(0.2, 3.0))
        bt = float(rng.uniform(0.1, 10.0))
        P = WeightParams(2, p, ell)
        v = solve_symmetrized(radial_problem(P, R, bt))
        ex = explicit_v(P, R, bt)
        r = np.concatenate([v.radii, np.linspace(0, R, 1001)])
        worst = max(worst, float(np.max(np.abs(v(r) - ex(r)))))
    record(2, worst <= 1e-8, f"max |v - v_explicit| over 10 random tuples = {worst:.2e} (bound 1e-8)")


# ---------------------------------------------------------------------------
# 3. solver oracle

def test_criterion_3_solver_oracle():
    errs, hs, within = [], [], True
    for h in (0.1, 0.05, 0.025, 0.0125):
        m = M.disk(1.0, h)
        pr = RobinProblem(m, WeightParams(2, 2, -1), ScalarField.constant(m, 1.0), RobinCoefficient.constant(1.0))
        e = float(np.max(np.abs(solve(pr).u - (2 - np.hypot(*m.vertices.T)))))
        errs.append(e)
        hs.append(m.h)
        within &= e <= 0.5 * m.h
    orders = np.diff(np.log(errs)) / np.diff(np.log(hs))
    ok = within and bool(np.all(orders >= 1.0))
    record(3, ok, f"max error / h = {max(e / h for e, h in zip(errs, hs)):.3f} (bound 0.5); "
                  f"orders over three refinements = {', '.join(f'{o:.3f}' for o in orders)}")


# ---------------------------------------------------------------------------
# 4 and 9. norm comparison, minima and flux on non-radial configurations

NON_RADIAL = [
    ("square", lambda h: M.square(1.0, h), 2.0, -1.0, "1 + x**2", lambda x, y: 1 + 0 * x),
    ("ellipse", lambda h: M.ellipse(1.0, 0.6, h, center=(0.2, 0.1)), 2.0, -0.5, "1",
     lambda x, y: np.exp(-x * x - y * y)),
    ("L-shape", lambda h: M.l_shape(1.0, h, center=(-0.3, -0.25)), 3.0, -1.0, "2 + y", lambda x, y: 1 + 0 * x),
    ("off-centre disk", lambda h: M.disk(1.0, h, center=(0.3, 0.2)), 4.0, -1.5, "1", lambda x, y: 1 + x * x),
    ("annulus", lambda h: M.annulus(0.3, 1.0, h), 2.5, -0.3, "1 + 0.5*y**2", lambda x, y: 1 + 0 * x),
]


@pytest.fixture(scope="module")
def non_radial_runs():
    runs = {}
    for name, make, p, ell, beta, f in NON_RADIAL:
        for h in (0.1, 0.05):
            m = make(h)
            pr = RobinProblem(m, WeightParams(2, p, ell), ScalarField.from_function(m, f),
                              RobinCoefficient.expression(beta))
            runs[name, h] = Pipeline.run(pr, CFG)
    return runs


def test_criterion_4_norm_comparison(non_radial_runs):
    ok, worst, lines = True, math.inf, []
    for name, *_ in NON_RADIAL:
        coarse, fine = (verify_norm_comparison(non_radial_runs[name, h].problem, CFG, name,
                                               non_radial_runs[name, h]) for h in (0.1, 0.05))
        hyp = coarse.admissible
        passed = coarse.passed and fine.passed
        consistent = all(refinement_consistent(coarse, fine).values())
        ok &= hyp and passed and consistent
        worst = min(worst, *(c.margin / c.tol for c in fine.checks))
        if not (hyp and passed and consistent):
            lines.append(f"{name}: hypotheses={hyp} pass={passed} refinement={consistent}")
    record(4, ok, f"{len(NON_RADIAL)} configurations, both norms at h and h/2, refinement-consistent; "
                  f"smallest margin/tol = {worst:.1f}" + ("; " + "; ".join(lines) if lines else ""))


def test_criterion_9_minima_and_flux(non_radial_runs):
    min_minima, min_flux = math.inf, math.inf
    for (name, h), pl in non_radial_runs.items():
        min_minima = min(min_minima, verify_minima(pl.u, pl.v).checks[0].margin)
        min_flux = min(min_flux, verify_flux(pl).margin("boundary_flux<=source/(p*beta_tilde)"))
    worst_eq = 0.0
    for p, ell in [(2, -1), (3, -1), (3, -1.3), (4, -1.5), (2.5, -0.3)]:
        m = M.disk(1.0, 0.05)
        pr = RobinProblem(m, WeightParams(2, p, ell), ScalarField.constant(m, 1.0), RobinCoefficient.constant(1.0))
        pl = Pipeline.run(pr, CFG)
        c = verify_flux(pl).checks[0]
        worst_eq = max(worst_eq, abs(c.rhs - c.lhs) / abs(c.rhs))
    ok = min_minima >= 0 and min_flux >= 0 and worst_eq <= 1e-6
    record(9, ok, f"min(v_m - u_m) = {min_minima:.4f}, min boundary-flux margin = {min_flux:.4f} "
                  f"over all non-radial runs; radial flux equality rel gap = {worst_eq:.1e} (bound 1e-6)")


# ---------------------------------------------------------------------------
# 5. pointwise comparison

def test_criterion_5_pointwise():
    worst, refused_ok, details = math.inf, True, []
    domains = {"square": M.square(1.0, 0.05), "ellipse": M.ellipse(1.0, 0.6, 0.05, center=(0.2, 0.1))}
    ok = True
    for name, m in domains.items():
        for p, ell in [(2, -1), (3, -1), (3, -1.3)]:
            pr = RobinProblem(m, WeightParams(2, p, ell), ScalarField.constant(m, 1.0), RobinCoefficient.constant(1.0))
            rep = verify_pointwise_comparison(pr, CFG)
            c = rep.checks[0]
            ok &= rep.status == "pass"
            worst = min(worst, c.margin / c.tol)
            details.append(f"{name}({p:g},{ell:g})")
        bad = RobinProblem(m, WeightParams(2, 3, -0.5), ScalarField.constant(m, 1.0), RobinCoefficient.constant(1.0))
        refused_ok &= verify_pointwise_comparison(bad, CFG).status == "refused"
    ok &= refused_ok
    record(5, ok, f"u# <= v + C_tol h on the full radial grid for {len(details)} runs, "
                  f"smallest margin/tol = {worst:.2f}; inadmissible (3,-0.5) refused: {refused_ok}")


# ---------------------------------------------------------------------------
# 6. Faber-Krahn

def test_criterion_6_faber_krahn():
    sq = verify_faber_krahn(M.square(1.0, 0.05), RobinCoefficient.constant(1.0), WeightParams(2, 2, -1))
    eq = verify_faber_krahn(M.disk(1.0, 0.05), RobinCoefficient.constant(1.0), WeightParams(2, 2, -1))
    margin = sq.checks[0].margin
    rel_eq = abs(eq.info["relative_margin"])
    ok = sq.status == "pass" and margin > 0 and rel_eq <= 1e-3
    record(6, ok, f"square: lambda1 = {sq.info['lambda_domain']:.6f} >= {sq.info['lambda_ball']:.6f} "
                  f"(margin {margin:.4f}); centred disk relative margin = {rel_eq:.1e} (bound 1e-3)")


# ---------------------------------------------------------------------------
# 7. rearrangements

def grid_mesh(n):
    g = np.linspace(-1, 1, n + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    v = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b, c, d = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel(), idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    return TriMesh.from_triangles(v, np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])]))


def analytic_gap() -> float:
    """Gaussian bump exp(-a|x|^2) on the unit disk with closed-form μ."""
    a, worst = 3.0, 0.0
    for ell in (-1.0, -0.5, -1.5):
        P = WeightParams(2, 2, ell)
        total = float(P.ball_measure(1.0))
        t = default_levels(1.0, 20000)
        mu = P.ball_measure(np.sqrt(np.clip(-np.log(np.maximum(t, 1e-300)) / a, 0, 1)))
        mu[t <= math.exp(-a)] = total
        c = DistributionCurve(t, mu, total=total)
        us = decreasing_rearrangement(c)
        ush = weighted_rearrangement(us, P)
        for q in (1.0, 2.0, 3.5):
            exact = 2 * np.pi * quad(lambda r: math.exp(-a * q * r * r) * r ** (1 + ell), 0, 1,
                                     epsabs=1e-15, epsrel=1e-13)[0]
            for val in (us.norm(q) ** q, weighted_Lp_norm(ush, P, q) ** q, cavalieri(c, q)):
                worst = max(worst, abs(val / exact - 1))
    return worst


def p1_gap() -> float:
    m = M.ellipse(1.0, 0.7, 0.05, center=(0.15, -0.1))
    u = ScalarField.from_function(m, lambda x, y: 1 + np.sin(2 * x) * np.cos(3 * y))
    worst = 0.0
    for ell, q in [(-1.0, 1.0), (-1.0, 2.0), (-0.5, 3.0), (-1.5, 2.0)]:
        P = WeightParams(2, 2, ell)
        us = decreasing_rearrangement(distribution_function(u, P))
        ref = weighted_Lp_norm(u, P, q)
        worst = max(worst, abs(us.norm(q) / ref - 1), abs(weighted_Lp_norm(weighted_rearrangement(us, P), P, q) / ref - 1))
    return worst


def hardy_littlewood_pairs(rng, n=100) -> tuple[int, float]:
    P = WeightParams(2, 2, -1)
    m = M.square(1.0, 0.25)
    centroids = m.vertices[m.triangles].mean(axis=1)
    passed, worst = 0, math.inf
    for _ in range(n):
        u = ScalarField(m, rng.uniform(0.0, rng.uniform(0.5, 3.0), m.n_vertices))
        kind = rng.integers(3)
        if kind == 0:
            mask = rng.uniform(size=m.n_triangles) < rng.uniform(0.1, 0.9)
        elif kind == 1:
            mask = np.hypot(*(centroids - rng.uniform(-1, 1, 2)).T) < rng.uniform(0.2, 1.2)
        else:
            mask = centroids @ rng.normal(size=2) > rng.uniform(-0.5, 0.5)
        rep = hardy_littlewood_check(u, P, subset=mask)
        passed += rep.passed
        worst = min(worst, rep.margin / max(rep.rhs, 1e-300))
    return passed, worst


def monte_carlo_z(rng) -> float:
    ell = -0.5
    m = grid_mesh(5)
    u = ScalarField(m, rng.uniform(0, 1, m.n_vertices))
    curve = distribution_function(u, WeightParams(2, 2, ell))
    N = 10**6
    pts = rng.uniform(-1, 1, (N, 2))
    vals = np.full(N, np.nan)
    V = m.vertices[m.triangles]
    for k in range(m.n_triangles):
        a, b, c = V[k]
        lam = np.linalg.solve(np.array([b - a, c - a]).T, (pts - a).T).T
        inside = (lam[:, 0] >= 0) & (lam[:, 1] >= 0) & (lam.sum(axis=1) <= 1)
        tri = m.triangles[k]
        l1, l2 = lam[inside, 0], lam[inside, 1]
        vals[inside] = (1 - l1 - l2) * u.values[tri[0]] + l1 * u.values[tri[1]] + l2 * u.values[tri[2]]
    w = 4.0 * np.hypot(*pts.T) ** ell
    z = 0.0
    for t in (0.1, 0.3, 0.5, 0.7, 0.9):
        s = w * (vals > t)
        z = max(z, abs(curve(t) - s.mean()) / (s.std() / math.sqrt(N)))
    return z


def test_criterion_7_rearrangements():
    rng = np.random.default_rng(7)
    a_gap = analytic_gap()
    p_gap = p1_gap()
    hl_pass, hl_worst = hardy_littlewood_pairs(rng)
    z = monte_carlo_z(rng)
    ok = a_gap <= 1e-8 and p_gap <= 1e-6 and hl_pass == 100 and z <= 3.0
    record(7, ok, f"analytic equimeasurability rel gap = {a_gap:.1e} (bound 1e-8); P1 gap = {p_gap:.1e} "
                  f"(bound 1e-6); Hardy-Littlewood {hl_pass}/100 (min rel margin {hl_worst:.2e}); "
                  f"Monte-Carlo max |z| = {z:.2f} (bound 3)")


# ---------------------------------------------------------------------------
# 8. Gronwall-type lemma

def test_criterion_8_gronwall():
    rng = np.random.default_rng(8)
    reps = [verify_gronwall(GronwallInstance.sampled(rng)) for _ in range(100)]
    n_pass = sum(r.status == "pass" for r in reps)
    gaps = []
    for p in (1.5, 2.0, 3.0, 4.5):
        for inst in (GronwallInstance.power_extremal(p, 0.7), GronwallInstance.affine_extremal(1.3, 2.0, p, 0.4)):
            r = verify_gronwall(inst)
            gaps.append(r.equality_gap if r.status == "pass" else math.inf)
    ok = n_pass == 100 and max(gaps) <= 1e-10
    record(8, ok, f"{n_pass}/100 sampled instances pass (i) and (ii) on [tau0, 10 tau0]; "
                  f"extremal families max equality gap = {max(gaps):.1e} (bound 1e-10)")
