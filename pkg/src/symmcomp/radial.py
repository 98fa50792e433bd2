"""The symmetrized Robin problem on the centred ball and its radial solution.

For a nonincreasing radial source f♯ the solution v satisfies

    r^{n-1} |v'(r)|^{p-1} = I(r) := ∫_0^r f♯(s) s^{n-1+ell} ds,
    v(R) = (R^{1-n} I(R) / β_eff)^{1/(p-1)},

and v(r) = v(R) + ∫_r^R |v'|.  I is exact because f♯ comes from a
piecewise-linear decreasing rearrangement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import HypothesisError
from .geometry import SymmetrizedBall, WeightParams, symmetrized_ball, weighted_measure
from .mesh import TriMesh
from .quadrature import gauss_jacobi01, gauss_legendre01
from .rearrangement import (
    DecreasingProfile,
    RadialProfile,
    decreasing_rearrangement,
    distribution_function,
    radial_grid,
    weighted_rearrangement,
)
from .solver import RobinCoefficient, RobinProblem, SolutionField, boundary_trace

DENSIFY = 8


@dataclass(frozen=True, eq=False)
class SymmetrizedProblem:
    ball: SymmetrizedBall
    f_sharp: RadialProfile
    f_star: DecreasingProfile
    beta_tilde: float
    beta_eff: float
    params: WeightParams
    source_total: float  # ∫_Ω f |x|^ell on the original mesh

    @property
    def r_sharp(self) -> float:
        return self.ball.radius

    def equimeasurability_gap(self) -> float:
        """Relative gap between ∫ f♯|x|^ell over the ball and ∫ f|x|^ell over Ω."""
        ball_total = self.f_star.integral()
        scale = max(abs(self.source_total), 1e-300)
        return abs(ball_total - self.source_total) / scale


def beta_tilde(mesh: TriMesh, beta: RobinCoefficient, params: WeightParams) -> float:
    """inf over ∂Ω of β(x)|x|^{-ell/p'}.

    Sampled at the boundary quadrature nodes and vertices, then the edges
    next to the minimiser are resampled ``DENSIFY`` times more finely.
    """
    k = params.k
    v, b = mesh.vertices, mesh.boundary
    rule = mesh.edge_rule(0.0)

    def g(xy, edge):
        return beta(xy, edge) * np.hypot(xy[:, 0], xy[:, 1]) ** (-k)

    vals = g(rule.xy, rule.elem)
    edges = np.arange(len(b))
    vert_vals = g(v[b[:, 0]], edges)
    i = int(np.argmin(vals))
    best_edge = int(rule.elem[i]) if vals[i] <= vert_vals.min() else int(np.argmin(vert_vals))
    best = min(float(vals.min()), float(vert_vals.min()))
    # neighbours share an endpoint with the minimising edge
    e0, e1 = b[best_edge]
    near = np.flatnonzero((b[:, 0] == e1) | (b[:, 1] == e0) | (edges == best_edge))
    s = np.linspace(0.0, 1.0, DENSIFY * 5 + 1)
    P, Q = v[b[near, 0]], v[b[near, 1]]
    xy = (P[:, None, :] * (1 - s)[None, :, None] + Q[:, None, :] * s[None, :, None]).reshape(-1, 2)
    dense = g(xy, np.repeat(near, len(s)))
    best = min(best, float(dense.min()))
    if not best > 0:
        raise HypothesisError(f"hypothesis (H3) violated: inf β|x|^(-ell/p') = {best} <= 0")
    return best


def symmetrize_problem(problem: RobinProblem, n_levels: int = 1024) -> SymmetrizedProblem:
    problem.validate()
    P = problem.params
    mesh = problem.mesh
    ball = symmetrized_ball(weighted_measure(mesh, P.ell), P)
    curve = distribution_function(problem.f, P, n_levels=n_levels)
    f_star = decreasing_rearrangement(curve)
    f_sharp = weighted_rearrangement(f_star, P)
    bt = beta_tilde(mesh, problem.beta, P)
    rule = mesh.rule(P.ell)
    total = float(np.sum(rule.w * problem.f.at_rule(rule)))
    return SymmetrizedProblem(
        ball=ball,
        f_sharp=f_sharp,
        f_star=f_star,
        beta_tilde=bt,
        beta_eff=bt * ball.radius**P.k,
        params=P,
        source_total=total,
    )


def radial_problem(params: WeightParams, r_sharp: float, beta_tilde_value: float,
                   f_star: DecreasingProfile | None = None) -> SymmetrizedProblem:
    """Symmetrized problem given directly by its data (f ≡ 1 by default)."""
    ball = SymmetrizedBall(float(r_sharp), params)
    if f_star is None:
        f_star = DecreasingProfile(np.array([0.0, ball.measure]), np.array([1.0, 1.0]), total=ball.measure)
    f_sharp = weighted_rearrangement(f_star, params)
    return SymmetrizedProblem(
        ball=ball,
        f_sharp=f_sharp,
        f_star=f_star,
        beta_tilde=float(beta_tilde_value),
        beta_eff=float(beta_tilde_value) * r_sharp**params.k,
        params=params,
        source_total=f_star.integral(),
    )


class _RadialFlux:
    """|v'(r)| = (r^{1-n} I(r))^{1/(p-1)} with I from the cumulative of f*."""

    def __init__(self, sp: SymmetrizedProblem):
        self.P = sp.params
        self.f_star = sp.f_star
        self.c = 1.0 / self.P.surface_const
        # behaviour near r = 0: |v'| ~ r^a
        self.a = (1.0 + self.P.ell) / (self.P.p - 1.0)

    def inner(self, r):
        S = self.P.ball_measure(r)
        return self.c * self.f_star.cumulative(np.minimum(S, self.f_star.total))

    def __call__(self, r):
        r = np.asarray(r, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (r ** (1 - self.P.n) * self.inner(r)) ** (1.0 / (self.P.p - 1.0))
        return np.where(r > 0, out, 0.0 if self.a > 0 else np.inf)

    def smooth_part(self, r):
        """|v'(r)| / r^a, bounded near the origin."""
        r = np.asarray(r, float)
        return self(r) / r**self.a


_GL16 = gauss_legendre01(16)
_GL8 = gauss_legendre01(8)


def _cell_integrals(flux: _RadialFlux, a: np.ndarray, b: np.ndarray, rtol: float, scale: float,
                    max_depth: int = 40) -> np.ndarray:
    """∫_a^b |v'| per cell with a 16/8-point Gauss error estimate and
    bisection of cells that miss the tolerance."""
    out = np.zeros(len(a))
    owner = np.arange(len(a))
    sj16, wj16 = gauss_jacobi01(16, flux.a)
    sj8, wj8 = gauss_jacobi01(8, flux.a)
    for _ in range(max_depth):
        if len(a) == 0:
            return out
        L = b - a
        fine = np.empty(len(a))
        coarse = np.empty(len(a))
        sing = a == 0.0
        reg = ~sing
        if reg.any():
            for (tn, tw), dst in ((_GL16, fine), (_GL8, coarse)):
                r = a[reg, None] + L[reg, None] * tn[None, :]
                dst[reg] = L[reg] * (flux(r) @ tw)
        if sing.any():
            Ls = L[sing]
            fine[sing] = Ls ** (flux.a + 1) * (flux.smooth_part(Ls[:, None] * sj16[None, :]) @ wj16)
            coarse[sing] = Ls ** (flux.a + 1) * (flux.smooth_part(Ls[:, None] * sj8[None, :]) @ wj8)
        ok = np.abs(fine - coarse) <= rtol * scale * np.maximum(L / max(b.max(), 1e-300), 1e-6)
        np.add.at(out, owner[ok], fine[ok])
        bad = ~ok
        mid = 0.5 * (a[bad] + b[bad])
        a = np.concatenate([a[bad], mid])
        b = np.concatenate([mid, b[bad]])
        owner = np.concatenate([owner[bad], owner[bad]])
    # depth exhausted: keep the best available estimate
    L = b - a
    r = a[:, None] + L[:, None] * _GL16[0][None, :]
    np.add.at(out, owner, L * (np.nan_to_num(flux(r), posinf=0.0) @ _GL16[1]))
    return out


def solve_symmetrized(sp: SymmetrizedProblem, radii: np.ndarray | None = None,
                      rtol: float = 1e-10) -> RadialProfile:
    """Radial solution v of the symmetrized problem on [0, r♯]."""
    P = sp.params
    if np.any(sp.f_star.y < 0):
        raise ValueError("invalid input: f♯ must be nonnegative")
    R = sp.r_sharp
    if radii is None:
        radii = radial_grid(R)
    breaks = np.asarray(sp.f_sharp.breaks if sp.f_sharp.breaks is not None else [], float)
    breaks = breaks[(breaks > 0) & (breaks < R)]
    nodes = np.union1d(np.asarray(radii, float), breaks)
    nodes = np.union1d(nodes, [0.0, R])
    flux = _RadialFlux(sp)
    total = sp.f_star.integral()
    if total == 0.0:
        zero = np.zeros_like(nodes)
        return RadialProfile(nodes, zero, P, fn=lambda r: np.zeros_like(np.asarray(r, float)), breaks=breaks)
    vR = (R ** (1 - P.n) * flux.inner(R) / sp.beta_eff) ** (1.0 / (P.p - 1))
    # scale for the absolute tolerance: the total drop of v is O(R |v'(R)|)
    scale = max(vR, R * float(flux(np.array([R]))[0]))
    cells = _cell_integrals(flux, nodes[:-1], nodes[1:], rtol, scale)
    tail = np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])
    values = vR + tail

    def fn(r):
        r = np.clip(np.asarray(r, float), 0.0, R)
        flat = r.ravel()
        j = np.clip(np.searchsorted(nodes, flat, side="left"), 1, len(nodes) - 1)
        upper = nodes[j]
        part = _partial(flux, flat, upper, nodes[j - 1])
        out = values[j] + part
        return out.reshape(r.shape) if r.ndim else float(out[0])

    return RadialProfile(nodes, values, P, fn=fn, breaks=breaks)


def _partial(flux: _RadialFlux, lo: np.ndarray, hi: np.ndarray, cell_start: np.ndarray) -> np.ndarray:
    """∫_lo^hi |v'| for points inside a single cell."""
    tn, tw = _GL16
    L = hi - lo
    out = L * (np.nan_to_num(flux(lo[:, None] + L[:, None] * tn[None, :]), posinf=0.0) @ tw)
    first = cell_start == 0.0
    if first.any():
        sj, wj = gauss_jacobi01(16, flux.a)

        def from_zero(x):
            x = np.maximum(x, 1e-300)
            return x ** (flux.a + 1) * (flux.smooth_part(x[:, None] * sj[None, :]) @ wj)

        out[first] = from_zero(hi[first]) - np.where(lo[first] > 0, from_zero(lo[first]), 0.0)
    return out


def explicit_v(params: WeightParams, r_sharp: float, beta_tilde_value: float,
               radii: np.ndarray | None = None) -> RadialProfile:
    """Closed-form radial solution for f ≡ 1."""
    n, p, l = params.n, params.p, params.ell
    R = float(r_sharp)
    e = (l + p) / (p - 1)
    A = (p - 1) / ((l + p) * (n + l) ** (1 / (p - 1)))
    B = (R ** (l / p + 1) / (beta_tilde_value * (n + l))) ** (1 / (p - 1))

    def fn(r):
        r = np.clip(np.asarray(r, float), 0.0, R)
        return A * (R**e - r**e) + B

    if radii is None:
        radii = radial_grid(R)
    return RadialProfile(radii, fn(radii), params, fn=fn)


@dataclass
class FluxReport:
    """Boundary flux at level τ against (1/(p β̃)) ∫ f*.

    ``kind`` is ``equality`` for the radial solution and ``inequality``
    for a solution on a general domain.
    """

    lhs: float
    rhs: float
    tol: float
    kind: str
    tau: float = float("inf")
    extra: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        if self.kind == "equality":
            return abs(self.margin) <= self.tol
        return self.margin >= -self.tol


def flux_level_check_radial(sp: SymmetrizedProblem, v: RadialProfile, rtol: float = 1e-6,
                            tau: float | None = None) -> FluxReport:
    """For v the boundary term equals the right side exactly."""
    P = sp.params
    R = sp.r_sharp
    vm = float(v(np.array([R]))[0])
    tau = vm if tau is None else tau
    if tau < vm * (1 - 1e-12):
        raise ValueError("level τ must be at least v(r♯)")
    lhs = vm ** (P.p - 1) * P.sphere_perimeter(R) / P.p
    rhs = sp.f_star.integral() / (P.p * sp.beta_tilde)
    return FluxReport(float(lhs), float(rhs), rtol * abs(rhs), "equality", tau)


def flux_level_check(problem: RobinProblem, u: SolutionField, bt: float | None = None,
                     tau: float | None = None, rtol: float = 1e-9) -> FluxReport:
    """∫_∂Ω min(u,τ)^p/(p u) |x|^{ell/p'} ≤ (1/(p β̃)) ∫ f |x|^ell."""
    P = problem.params
    bt = beta_tilde(problem.mesh, problem.beta, P) if bt is None else bt
    tr = boundary_trace(u)
    r = np.hypot(tr.xy[:, 0], tr.xy[:, 1])
    val = np.maximum(tr.values, 0.0)
    if tau is None:
        integrand = val ** (P.p - 1) / P.p
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            integrand = np.where(val > 0, np.minimum(val, tau) ** P.p / (P.p * val), 0.0)
    lhs = tr.integrate(integrand * r**P.k)
    rule = problem.mesh.rule(P.ell)
    F = float(np.sum(rule.w * problem.f.at_rule(rule)))
    rhs = F / (P.p * bt)
    return FluxReport(float(lhs), float(rhs), rtol * abs(rhs), "inequality",
                      float("inf") if tau is None else tau, {"beta_tilde": bt})
