"""First Robin eigenvalue of the weighted p-Laplacian.

    λ₁ = min (∫|∇ψ|^p + ∫_∂Ω β|ψ|^p) / ∫|ψ|^p |x|^ell

On meshes: inverse iteration for p = 2 and the nonlinear inverse power
method for p ≠ 2, where each step is a Robin solve with load |ψ|^{p-2}ψ.
On the symmetrized ball: shooting on the radial Euler-Lagrange equation.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.sparse.linalg import factorized

from .errors import NonConvergenceError
from .geometry import SymmetrizedBall, WeightParams
from .mesh import ScalarField, TriMesh
from .quadrature import gauss_jacobi01, gauss_legendre01
from .rearrangement import RadialProfile, radial_grid
from .solver import EnergyFunctional, RobinCoefficient, RobinForms, SolverConfig, minimize

log = logging.getLogger(__name__)

HEURISTIC_LABEL = "upper bound certified, global minimum heuristic"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("SYMMCOMP_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class EigenConfig:
    tol: float = 1e-10  # relative eigen-residual for p = 2
    tol_nonlinear: float = 1e-8  # stationarity residual for p ≠ 2
    max_iter: int = 500
    max_outer: int = 400
    eps: float = 1e-7  # regularization inside the p ≠ 2 inner solves
    shoot_tol: float = 1e-10


@dataclass
class EigenResult:
    lam: float
    eigenfield: ScalarField | RadialProfile = field(repr=False)
    residual: float
    iterations: int
    label: str = "converged"
    starts: list = field(default_factory=list)
    history: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "lambda1": self.lam,
            "residual": self.residual,
            "iterations": self.iterations,
            "label": self.label,
            "starts": self.starts,
        }

    def write(self, json_path, csv_path=None) -> None:
        Path(json_path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        if csv_path is None:
            return
        if isinstance(self.eigenfield, RadialProfile):
            self.eigenfield.to_csv(csv_path)
        else:
            v = self.eigenfield.mesh.vertices
            rows = ["vertex,x,y,psi"] + [
                f"{i},{x!r},{y!r},{w!r}" for i, ((x, y), w) in enumerate(zip(v.tolist(), self.eigenfield.values.tolist()))
            ]
            Path(csv_path).write_text("\n".join(rows) + "\n")


def rayleigh_quotient(psi: ScalarField | np.ndarray, forms: RobinForms) -> float:
    values = psi.values if isinstance(psi, ScalarField) else np.asarray(psi, float)
    den = forms.weighted_power(values)
    if not den > 0:
        raise ValueError("zero denominator: ψ vanishes")
    return (forms.gradient_term(values) + forms.boundary_term(values)) / den


def _normalize(forms: RobinForms, psi: np.ndarray) -> np.ndarray:
    psi = psi / forms.weighted_power(psi) ** (1.0 / forms.params.p)
    # first eigenfunctions are sign-definite; fix the sign
    return psi if psi.sum() >= 0 else -psi


def _linear_eigen(forms: RobinForms, config: EigenConfig, x0: np.ndarray | None = None) -> EigenResult:
    A = (forms.stiffness() + forms.robin_mass()).tocsc()
    M = forms.mass
    solve_A = factorized(A)
    x = np.ones(forms.N) if x0 is None else np.array(x0, float)
    x /= np.sqrt(x @ (M @ x))
    history = []
    for it in range(1, config.max_iter + 1):
        y = solve_A(M @ x)
        x = y / np.sqrt(y @ (M @ y))
        Ax, Mx = A @ x, M @ x
        lam = float(x @ Ax)
        res = float(np.linalg.norm(Ax - lam * Mx) / np.linalg.norm(Ax))
        history.append((lam, res))
        if res <= config.tol:
            psi = _normalize(forms, x)
            return EigenResult(lam, ScalarField(forms.mesh, psi), res, it, "converged", history=history)
    raise NonConvergenceError("inverse iteration did not converge", history)


def _eigen_residual(forms: RobinForms, psi: np.ndarray, lam: float) -> float:
    """‖∇N(ψ)/p - λ ∇D(ψ)/p‖ / ‖λ ∇D(ψ)/p‖ for numerator N, denominator D."""
    p = forms.params.p
    at = forms.at_nodes(psi)
    dD = forms.load_from_nodes(np.abs(at) ** (p - 2) * at)
    E = EnergyFunctional(forms, lam * dD, 0.0)
    return float(np.linalg.norm(E.gradient(psi)) / np.linalg.norm(lam * dD))


def _nonlinear_eigen(forms: RobinForms, config: EigenConfig, psi0: np.ndarray, start: str) -> EigenResult:
    p = forms.params.p
    psi = _normalize(forms, np.abs(psi0) + 1e-12)
    lam = rayleigh_quotient(psi, forms)
    precond = factorized((forms.stiffness() + forms.robin_mass()).tocsc())
    inner_tol = SolverConfig().tolerance(p) * 1e-2
    history = [(lam, np.nan)]
    for it in range(1, config.max_outer + 1):
        at = forms.at_nodes(psi)
        b = forms.load_from_nodes(np.abs(at) ** (p - 2) * at)
        E = EnergyFunctional(forms, b, config.eps)
        w0 = psi * lam ** (-1.0 / (p - 1))
        w, *_ = minimize(E, w0, inner_tol, precond=precond)
        psi = _normalize(forms, w)
        lam_new = rayleigh_quotient(psi, forms)
        res = _eigen_residual(forms, psi, lam_new)
        history.append((lam_new, res))
        if lam_new > lam * (1 + 1e-12):
            log.debug("quotient increased at step %d (%.3e)", it, lam_new - lam)
        lam = lam_new
        if res <= config.tol_nonlinear:
            return EigenResult(lam, ScalarField(forms.mesh, psi), res, it, HEURISTIC_LABEL, [start], history)
    raise NonConvergenceError(
        f"nonlinear inverse iteration stalled at residual {history[-1][1]:.3e}", history
    )


def min_rayleigh(mesh: TriMesh, beta: RobinCoefficient, params: WeightParams,
                 config: EigenConfig | None = None, forms: RobinForms | None = None) -> EigenResult:
    config = config or EigenConfig()
    params.require()
    m, _ = beta.bounds(mesh)
    if not m > 0:
        from .errors import HypothesisError

        raise HypothesisError(f"hypothesis (H3) violated: inf β = {m}")
    forms = forms or RobinForms(mesh, params, beta)
    if params.p == 2:
        return _linear_eigen(forms, config)
    lin_forms = RobinForms(mesh, WeightParams(params.n, 2.0, params.ell), beta)
    p2 = _linear_eigen(lin_forms, EigenConfig(tol=1e-8)).eigenfield.values
    starts = [("constant", np.ones(forms.N)), ("p2-eigenfield", p2)]

    def run(item):
        name, psi0 = item
        try:
            return _nonlinear_eigen(forms, config, psi0, name)
        except NonConvergenceError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=min(worker_count(), len(starts))) as pool:
        results = list(pool.map(run, starts))
    ok = [r for r in results if isinstance(r, EigenResult)]
    if not ok:
        raise NonConvergenceError("no multistart run converged", [r.history for r in results])
    best = min(ok, key=lambda r: r.lam)  # ties keep start order
    best.starts = [(r.starts[0], r.lam) for r in ok]
    return best


# ---------------------------------------------------------------------------
# radial shooting


def _shoot(lam: float, R: float, beta_eff: float, P: WeightParams, rtol: float, dense: bool = False):
    """Integrate in t = ln r from the series data at r0 = 1e-10 R with w(0) = 1."""
    n, p, l = P.n, P.p, P.ell
    a = (1 + l) / (p - 1)
    r0 = 1e-10 * R
    c = (lam / (n + l)) ** (1 / (p - 1))
    w0 = 1.0 - c * r0 ** (a + 1) / (a + 1)
    q0 = -lam * r0 ** (n + l) / (n + l)

    def rhs(t, y):
        r = np.exp(t)
        w, q = y
        dw = r * np.sign(q) * (abs(q) / r ** (n - 1)) ** (1 / (p - 1))
        dq = -lam * r ** (n + l) * abs(w) ** (p - 2) * w
        return [dw, dq]

    sol = solve_ivp(rhs, (np.log(r0), np.log(R)), [w0, q0], method="DOP853", rtol=rtol, atol=1e-14,
                    dense_output=dense)
    if not sol.success:
        raise NonConvergenceError(f"radial integration failed at λ = {lam}: {sol.message}")
    w, q = sol.y[:, -1]
    F = q * R ** (1 - n) + beta_eff * abs(w) ** (p - 2) * w
    return F, sol


def radial_eigen(ball: SymmetrizedBall, beta_eff: float, params: WeightParams | None = None,
                 config: EigenConfig | None = None, radii: np.ndarray | None = None) -> EigenResult:
    """First eigenvalue of the radial problem with Robin constant β_eff at r = R."""
    config = config or EigenConfig()
    P = params or ball.params
    R = ball.radius
    if not beta_eff > 0:
        raise ValueError("β_eff must be positive")
    rtol = 1e-12
    # ψ ≡ 1 bounds λ₁ from above
    lam_hi = beta_eff * P.surface_const * R ** (P.n - 1) / P.ball_measure(R)
    shoot = lambda x: _shoot(x, R, beta_eff, P, rtol)[0]  # noqa: E731

    def below_first(x):
        # λ < λ₁ exactly when the shot stays positive and overshoots the Robin condition
        F, sol = _shoot(x, R, beta_eff, P, rtol)
        return F > 0 and sol.y[0].min() > 0

    steps = 0
    while below_first(lam_hi):  # only from round-off when λ₁ is close to the bound
        lam_hi *= 1.25
        steps += 1
    lam_lo = lam_hi / 1.25
    while not below_first(lam_lo):
        lam_hi, lam_lo = lam_lo, lam_lo / 1.25
        steps += 1
        if steps > 400:
            raise NonConvergenceError("bracket failure in radial shooting")
    # a wide bracket may hold a higher root too; shrink until F changes sign once
    while shoot(lam_hi) > 0:
        mid = math.sqrt(lam_lo * lam_hi)
        lam_lo, lam_hi = (mid, lam_hi) if below_first(mid) else (lam_lo, mid)
        steps += 1
        if steps > 400:
            raise NonConvergenceError("bracket failure in radial shooting")
    lam = brentq(shoot, lam_lo, lam_hi,
                 xtol=config.shoot_tol * lam_lo * 1e-3, rtol=4 * np.finfo(float).eps, maxiter=200)
    F, sol = _shoot(lam, R, beta_eff, P, rtol, dense=True)
    if radii is None:
        radii = radial_grid(R)
    t = np.log(np.clip(radii, 1e-10 * R, R))
    w = sol.sol(t)[0]
    w[radii < 1e-10 * R] = 1.0
    if np.any(w <= 0):
        raise NonConvergenceError("shooting converged to a sign-changing profile")

    def fn(r, _sol=sol):
        r = np.asarray(r, float)
        tt = np.log(np.clip(r, 1e-10 * R, R))
        out = _sol.sol(np.ravel(tt))[0].reshape(np.shape(r))
        return np.where(r < 1e-10 * R, 1.0, out)

    prof = RadialProfile(radii, w, P, fn=fn)
    norm = prof.integrate(lambda x: np.abs(x) ** P.p) ** (1 / P.p)
    prof = RadialProfile(radii, w / norm, P, fn=lambda r, _f=fn, _c=norm: _f(r) / _c)
    quotient = radial_rayleigh(sol, lam, R, beta_eff, P)
    res = abs(F) / max(abs(beta_eff), 1e-300)
    return EigenResult(lam, prof, res, steps, "converged", history=[("quotient", quotient)])


def radial_rayleigh(sol, lam: float, R: float, beta_eff: float, P: WeightParams, m: int = 40) -> float:
    """Rayleigh quotient of the shooting profile, for certification."""
    n, p, l = P.n, P.p, P.ell
    edges = R * np.geomspace(1e-10, 1.0, 200)
    a, b = edges[:-1], edges[1:]
    tn, tw = gauss_legendre01(m)
    r = a[:, None] + (b - a)[:, None] * tn[None, :]
    w, q = sol.sol(np.log(r).ravel()).reshape(2, *r.shape)
    dw = (np.abs(q) / r ** (n - 1)) ** (1 / (p - 1))
    num = np.sum((b - a)[:, None] * tw * np.abs(dw) ** p * r ** (n - 1))
    den = np.sum((b - a)[:, None] * tw * np.abs(w) ** p * r ** (n - 1 + l))
    # the piece on [0, 1e-10 R] contributes w ≈ 1
    den += (1e-10 * R) ** (n + l) / (n + l)
    wR = sol.sol(np.log(R))[0]
    num += beta_eff * R ** (n - 1) * abs(wR) ** p
    return float(num / den)


def radial_eigen_p2_matrix(ball: SymmetrizedBall, beta_eff: float, params: WeightParams, n_el: int = 400):
    """Radial P1 Galerkin eigenvalue for p = 2, a cross-check for shooting."""
    from scipy.linalg import eigh

    R, n, l = ball.radius, params.n, params.ell
    x = R * (np.linspace(0, 1, n_el + 1) ** 1.5)
    K = np.zeros((n_el + 1, n_el + 1))
    Mm = np.zeros_like(K)
    sj, wj = gauss_jacobi01(10, n - 1 + l)
    tn, tw = gauss_legendre01(10)
    for e in range(n_el):
        x0, x1 = x[e], x[e + 1]
        L = x1 - x0
        kk = np.sum(tw * (x0 + L * tn) ** (n - 1)) / L
        if e == 0:
            s, ws = sj, wj * L ** (n + l)
            r = x1 * s
        else:
            r = x0 + L * tn
            ws = L * tw * r ** (n - 1 + l)
        phi = np.stack([(x1 - r) / L, (r - x0) / L])
        K[e:e + 2, e:e + 2] += kk * np.array([[1, -1], [-1, 1]])
        Mm[e:e + 2, e:e + 2] += (phi * ws) @ phi.T
    K[-1, -1] += beta_eff * R ** (n - 1)
    return float(eigh(K, Mm, eigvals_only=True, subset_by_index=[0, 0])[0])
