"""Weighted distribution functions, decreasing and radial rearrangements,
weighted L^q and Lorentz norms."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .geometry import WeightParams, weighted_measure
from .mesh import ScalarField, TriMesh
from .quadrature import gauss_jacobi01, gauss_legendre01, triangle_measure, triangle_rule

DEFAULT_LEVELS = 512
EXTRA_VERTEX_LEVELS = 2048  # vertex values joined to the t-grid below this count


# ---------------------------------------------------------------------------
# curve containers


@dataclass(frozen=True)
class Curve:
    """Right-continuous curve through (x_i, y_i).

    ``x`` is nondecreasing; a repeated abscissa encodes a jump, and the
    last of the repeated entries is the value at that abscissa.
    ``kind`` is ``"linear"`` (interpolate) or ``"step"`` (hold y_i on
    [x_i, x_{i+1})).
    """

    x: np.ndarray
    y: np.ndarray
    kind: str = "linear"

    def __post_init__(self):
        x = np.asarray(self.x, float).reshape(-1)
        y = np.asarray(self.y, float).reshape(-1)
        if x.shape != y.shape or x.size == 0:
            raise ValueError("curve needs matching, non-empty x and y")
        if np.any(np.diff(x) < 0):
            raise ValueError("curve abscissae must be nondecreasing")
        if self.kind not in ("linear", "step"):
            raise ValueError(f"unknown interpolation kind {self.kind!r}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __call__(self, q):
        q = np.asarray(q, float)
        x, y = self.x, self.y
        i = np.searchsorted(x, q, side="right") - 1
        below = i < 0
        i = np.clip(i, 0, len(x) - 1)
        out = y[i].copy() if np.ndim(q) else np.array(y[i])
        if self.kind == "linear" and len(x) > 1:
            j = np.minimum(i + 1, len(x) - 1)
            dx = x[j] - x[i]
            inner = (j > i) & (dx > 0)
            with np.errstate(invalid="ignore", divide="ignore"):
                lam = np.where(inner, (q - x[i]) / np.where(dx > 0, dx, 1.0), 0.0)
            out = np.where(inner, y[i] + lam * (y[j] - y[i]), out)
        out = np.where(below, y[0], out)
        return out if np.ndim(q) else float(out)

    def segments(self):
        """Yield (x0, x1, y0, y1) for nondegenerate pieces."""
        x, y = self.x, self.y
        for k in range(len(x) - 1):
            if x[k + 1] > x[k]:
                y1 = y[k + 1] if self.kind == "linear" else y[k]
                yield x[k], x[k + 1], y[k], y1

    def integrate(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray], m: int = 16) -> float:
        """∫ fn(x, y(x)) dx over [x_0, x_K] with m-point Gauss per piece."""
        tn, tw = gauss_legendre01(m)
        segs = np.array(list(self.segments()))
        if segs.size == 0:
            return 0.0
        a, b, ya, yb = segs.T
        X = a[:, None] + (b - a)[:, None] * tn[None, :]
        Y = ya[:, None] + (yb - ya)[:, None] * tn[None, :]
        return float(np.sum((b - a)[:, None] * tw[None, :] * fn(X, Y)))

    def to_csv(self, path, header=("abscissa", "value")) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for a, b in zip(self.x.tolist(), self.y.tolist()):
                w.writerow([repr(a), repr(b)])


@dataclass(frozen=True)
class DistributionCurve(Curve):
    """t -> mu(t), nonincreasing; ``total`` is |Ω|_ell."""

    total: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if np.any(np.diff(self.y) > 1e-12 * max(1.0, self.total)):
            raise ValueError("distribution function must be nonincreasing")

    @property
    def sup(self) -> float:
        """ess sup |u|: smallest t with mu(t) = 0."""
        nz = np.flatnonzero(self.y > 0)
        return float(self.x[nz[-1] + 1]) if nz.size and nz[-1] + 1 < len(self.x) else float(self.x[-1])


@dataclass(frozen=True)
class DecreasingProfile(Curve):
    """s -> u*(s) on [0, total], nonincreasing."""

    total: float = 0.0

    def integral(self, upper: float | None = None) -> float:
        """∫_0^upper u*(s) ds (exact for the piecewise rule)."""
        upper = self.total if upper is None else upper
        return float(self.cumulative(upper))

    def cumulative(self, s):
        """S -> ∫_0^S u*(σ) dσ, vectorized and exact."""
        s = np.asarray(s, float)
        x, y = self.x, self.y
        if self.kind == "linear":
            seg = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(x) * (y[:-1] + y[1:]))])
        else:
            seg = np.concatenate([[0.0], np.cumsum(np.diff(x) * y[:-1])])
        i = np.clip(np.searchsorted(x, s, side="right") - 1, 0, len(x) - 1)
        part = s - x[i]
        val = self(s)
        if self.kind == "linear":
            extra = 0.5 * part * (y[i] + val)
        else:
            extra = part * y[i]
        out = np.where(s <= x[0], 0.0, seg[i] + extra)
        return out if np.ndim(s) else float(out)

    def norm(self, q: float) -> float:
        """||u*||_{L^q(0, total)}."""
        return self.integrate(lambda _x, y: np.abs(y) ** q) ** (1.0 / q)


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """w(x) = profile(|x|) on the centred ball of radius ``radii[-1]``.

    ``fn`` (optional) evaluates the profile exactly; ``breaks`` lists radii
    where it is not smooth, used as quadrature cell boundaries.
    """

    radii: np.ndarray
    values: np.ndarray
    params: WeightParams
    fn: Callable | None = field(default=None, repr=False)
    breaks: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "radii", np.asarray(self.radii, float))
        object.__setattr__(self, "values", np.asarray(self.values, float))

    @property
    def r_sharp(self) -> float:
        return float(self.radii[-1])

    def __call__(self, r):
        if self.fn is not None:
            return self.fn(r)
        return np.interp(r, self.radii, self.values)

    def integrate(self, g: Callable[[np.ndarray], np.ndarray], m: int = 12) -> float:
        """∫_ball g(w(|x|)) |x|^ell dx by 1-D quadrature in the radius."""
        P = self.params
        alpha = P.n - 1 + P.ell
        cells = self.radii
        if self.breaks is not None:
            cells = np.union1d(cells, self.breaks[(self.breaks > 0) & (self.breaks < self.r_sharp)])
        a, b = cells[:-1], cells[1:]
        tn, tw = gauss_legendre01(m)
        r = a[1:, None] + (b - a)[1:, None] * tn[None, :]
        wr = (b - a)[1:, None] * tw[None, :] * r**alpha
        total = np.sum(wr * g(self(r)))
        # first cell carries the r^alpha endpoint behaviour exactly
        sj, wj = gauss_jacobi01(m, alpha)
        r0 = b[0] * sj
        total += np.sum(wj * b[0] ** (alpha + 1) * g(self(r0)))
        return float(P.surface_const * total)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["radius", "value"])
            for a, b in zip(self.radii.tolist(), np.asarray(self(self.radii)).tolist()):
                w.writerow([repr(a), repr(b)])


def read_curve_csv(path, cls=Curve, **kw):
    rows = list(csv.reader(Path(path).read_text().splitlines()))[1:]
    arr = np.array([[float(a), float(b)] for a, b in rows])
    return cls(arr[:, 0], arr[:, 1], **kw)


# ---------------------------------------------------------------------------
# level sets of P1 fields


def superlevel(mesh: TriMesh, values: np.ndarray, levels: np.ndarray, ell: float,
               with_integral: bool = False):
    """Weighted measure of {u > t} (and ∫_{u>t} u |x|^ell) for each level t.

    Exact per triangle: partially covered triangles are cut along the
    level line of the linear interpolant and the cut piece is integrated
    with the weighted triangle rule.
    """
    levels = np.asarray(levels, float)
    tri = mesh.triangles
    U = values[tri]
    order = np.argsort(U, axis=1, kind="stable")
    Us = np.take_along_axis(U, order, axis=1)
    V = mesh.vertices[np.take_along_axis(tri, order, axis=1)]  # (T, 3, 2)
    rule = mesh.rule(ell)
    T = len(tri)
    m_T = rule.integrate(np.ones_like(rule.w), T)
    if with_integral:
        f = ScalarField(mesh, values)
        i_T = rule.integrate(f.at_rule(rule), T)
    # full triangles: u0 > t, via sorted prefix sums
    srt = np.argsort(Us[:, 0], kind="stable")
    u0s = Us[srt, 0]
    cm = np.concatenate([[0.0], np.cumsum(m_T[srt][::-1])])[::-1]
    first_above = np.searchsorted(u0s, levels, side="right")
    mu = cm[first_above].copy()
    if with_integral:
        ci = np.concatenate([[0.0], np.cumsum(i_T[srt][::-1])])[::-1]
        integ = ci[first_above].copy()

    lev_idx, par, A, B, C, sign = [], [], [], [], [], []
    for k, t in enumerate(levels):
        caseA = np.flatnonzero((Us[:, 0] <= t) & (t < Us[:, 1]))
        caseB = np.flatnonzero((Us[:, 1] <= t) & (t < Us[:, 2]))
        if caseA.size:
            u0, u1, u2 = Us[caseA].T
            V0, V1, V2 = V[caseA, 0], V[caseA, 1], V[caseA, 2]
            p01 = V0 + ((t - u0) / (u1 - u0))[:, None] * (V1 - V0)
            p02 = V0 + ((t - u0) / (u2 - u0))[:, None] * (V2 - V0)
            lev_idx.append(np.full(caseA.size, k))
            par.append(caseA)
            A.append(V0), B.append(p01), C.append(p02)
            sign.append(-np.ones(caseA.size))
            mu[k] += m_T[caseA].sum()
            if with_integral:
                integ[k] += i_T[caseA].sum()
        if caseB.size:
            u0, u1, u2 = Us[caseB].T
            V0, V1, V2 = V[caseB, 0], V[caseB, 1], V[caseB, 2]
            p12 = V1 + ((t - u1) / (u2 - u1))[:, None] * (V2 - V1)
            p02 = V0 + ((t - u0) / (u2 - u0))[:, None] * (V2 - V0)
            lev_idx.append(np.full(caseB.size, k))
            par.append(caseB)
            A.append(V2), B.append(p12), C.append(p02)
            sign.append(np.ones(caseB.size))
    if lev_idx:
        lev_idx = np.concatenate(lev_idx)
        par = np.concatenate(par)
        A, B, C = np.concatenate(A), np.concatenate(B), np.concatenate(C)
        sign = np.concatenate(sign)
        # orient every cut piece positively
        cr = (B[:, 0] - A[:, 0]) * (C[:, 1] - A[:, 1]) - (B[:, 1] - A[:, 1]) * (C[:, 0] - A[:, 0])
        neg = cr < 0
        B2 = np.where(neg[:, None], C, B)
        C2 = np.where(neg[:, None], B, C)
        pieces = triangle_measure(A, B2, C2, ell)
        mu += np.bincount(lev_idx, weights=sign * pieces, minlength=len(levels))
        if with_integral:
            sub = triangle_rule(A, B2, C2, ell)
            bary = mesh.barycentric(par[sub.elem], sub.xy)
            uval = np.einsum("ij,ij->i", bary, values[tri[par[sub.elem]]])
            ip = np.bincount(sub.elem, weights=sub.w * uval, minlength=len(A))
            integ += np.bincount(lev_idx, weights=sign * ip, minlength=len(levels))
    mu = np.maximum(mu, 0.0)
    return (mu, integ) if with_integral else mu


def default_levels(umax: float, n_levels: int = DEFAULT_LEVELS) -> np.ndarray:
    """Levels in [0, umax] clustered toward both ends."""
    j = np.arange(n_levels + 1)
    return umax * 0.5 * (1.0 - np.cos(np.pi * j / n_levels))


def distribution_function(field: ScalarField, params: WeightParams, t_grid=None,
                          n_levels: int = DEFAULT_LEVELS) -> DistributionCurve:
    """mu(t) = |{|u| > t}|_ell, piecewise linear between computed levels.

    ``t_grid`` overrides the default graded grid; it must cover [0, max|u|].
    Plateaus of u (flat triangles) produce jumps, stored as repeated t.
    """
    mesh = field.mesh
    u = field.values
    if not np.all(np.isfinite(u)):
        raise ValueError("field has non-finite values")
    ell = params.ell
    total = weighted_measure(mesh, ell)
    umax = float(np.max(np.abs(u)))
    if umax == 0.0:
        return DistributionCurve([0.0], [0.0], total=total)
    if t_grid is None:
        levels = default_levels(umax, n_levels)
        vals = np.unique(np.abs(u))
        if len(vals) <= EXTRA_VERTEX_LEVELS:
            levels = np.union1d(levels, vals)
    else:
        levels = np.unique(np.asarray(t_grid, float))
        if levels[0] > 0 or levels[-1] < umax * (1 - 1e-14):
            raise ValueError("t_grid must cover [0, max|u|]")
    levels = levels[levels <= umax]
    if levels[-1] < umax:
        levels = np.append(levels, umax)

    signs = [1.0] + ([-1.0] if np.any(u < 0) else [])
    # flat triangles give plateaus, hence jumps of mu
    flat_vals, flat_meas = _plateaus(mesh, u, ell, signs)
    levels = np.union1d(levels, flat_vals)
    mu = sum(superlevel(mesh, s * u, levels, ell) for s in signs)
    xs, ys = [], []
    for t, m in zip(levels, mu):
        j = np.flatnonzero(flat_vals == t)
        if j.size:
            xs.append(t)
            ys.append(m + flat_meas[j[0]])
        xs.append(t)
        ys.append(m)
    ys = np.minimum.accumulate(np.minimum(np.array(ys), total))
    return DistributionCurve(np.array(xs), ys, total=total)


def _plateaus(mesh, u, ell, signs):
    tri_vals = u[mesh.triangles]
    flat = np.all(tri_vals == tri_vals[:, :1], axis=1) & (tri_vals[:, 0] != 0)
    if not flat.any():
        return np.zeros(0), np.zeros(0)
    rule = mesh.rule(ell)
    m_T = rule.integrate(np.ones_like(rule.w), mesh.n_triangles)
    vals = np.abs(tri_vals[flat, 0])
    uniq, inv = np.unique(vals, return_inverse=True)
    return uniq, np.bincount(inv, weights=m_T[flat])


def decreasing_rearrangement(curve: DistributionCurve) -> DecreasingProfile:
    """u*(s) = inf{t : mu(t) <= s} on [0, |Ω|_ell]."""
    t, mu = curve.x, curve.y
    s = mu[::-1].copy()
    v = t[::-1].copy()
    if curve.kind == "step":
        raise ValueError("decreasing_rearrangement expects a linear distribution curve")
    if s[-1] < curve.total:
        s = np.append(s, curve.total)
        v = np.append(v, 0.0)
    return DecreasingProfile(s, v, kind="linear", total=curve.total)


def radial_grid(r_sharp: float, n: int = 2048) -> np.ndarray:
    """Radii on [0, r_sharp] clustered toward both ends."""
    j = np.arange(n)
    return r_sharp * 0.5 * (1.0 - np.cos(np.pi * j / (n - 1)))


def weighted_rearrangement(profile: DecreasingProfile, params: WeightParams,
                           radii: np.ndarray | None = None) -> RadialProfile:
    """u#(r) = u*(|B_r|_ell)."""
    r_sharp = float(params.ball_radius(profile.total))
    if radii is None:
        radii = radial_grid(r_sharp)
    breaks = params.ball_radius(np.clip(profile.x, 0.0, profile.total))

    def fn(r):
        return profile(params.ball_measure(np.minimum(r, r_sharp)))

    return RadialProfile(radii, fn(radii), params, fn=fn, breaks=np.unique(breaks))


# ---------------------------------------------------------------------------
# norms


def weighted_Lp_norm(obj, params: WeightParams, q: float) -> float:
    """(∫ |w|^q |x|^ell dx)^(1/q) for a mesh field or a radial profile."""
    if q < 1:
        raise ValueError("q must be >= 1")
    if isinstance(obj, RadialProfile):
        return obj.integrate(lambda w: np.abs(w) ** q) ** (1.0 / q)
    if isinstance(obj, DecreasingProfile):
        return obj.norm(q)
    rule = obj.mesh.rule(params.ell)
    return float(np.sum(rule.w * np.abs(obj.at_rule(rule)) ** q)) ** (1.0 / q)


def cavalieri(curve: DistributionCurve, q: float) -> float:
    """q ∫ t^(q-1) mu(t) dt."""
    return q * _t_power_integral(curve, q - 1.0, 1.0)


def _t_power_integral(curve: DistributionCurve, a: float, b: float, m: int = 16) -> float:
    """∫_0^∞ t^a mu(t)^b dt over the curve's support (a > -1)."""
    segs = [s for s in curve.segments()]
    if not segs:
        return 0.0
    total = 0.0
    tn, tw = gauss_legendre01(m)
    for x0, x1, y0, y1 in segs:
        if x0 == 0.0 and a != 0.0:
            sj, wj = gauss_jacobi01(m, a)
            yy = y0 + (y1 - y0) * sj
            total += x1 ** (a + 1) * np.sum(wj * np.maximum(yy, 0) ** b)
        else:
            t = x0 + (x1 - x0) * tn
            yy = y0 + (y1 - y0) * tn
            total += (x1 - x0) * np.sum(tw * t**a * np.maximum(yy, 0) ** b)
    return float(total)


def lorentz_norm(curve: DistributionCurve, p: float, q: float) -> float:
    """p^(1/q) (∫ t^q mu(t)^(q/p) dt/t)^(1/q); q = inf gives sup t^p mu(t)."""
    if not p > 0 or not q > 0:
        raise ValueError("Lorentz exponents must be positive")
    if np.isinf(q):
        # on a piece mu = a + b t the maximiser of t^p (a + b t) is
        # t = -p a / ((p + 1) b); segment ends give left limits at jumps
        best = float(np.max(curve.x**p * curve.y))
        for x0, x1, y0, y1 in curve.segments():
            cands = [x0, x1]
            b = (y1 - y0) / (x1 - x0)
            a = y0 - b * x0
            if b < 0:
                tc = -p * a / ((p + 1) * b)
                if x0 < tc < x1:
                    cands.append(tc)
            for t in cands:
                best = max(best, t**p * (a + b * t))
        return best
    with np.errstate(over="ignore", invalid="ignore"):
        val = p ** (1.0 / q) * _t_power_integral(curve, q - 1.0, q / p) ** (1.0 / q)
    if not np.isfinite(val):
        raise ValueError("not in Lorentz space")
    return float(val)


# ---------------------------------------------------------------------------
# Hardy-Littlewood


@dataclass
class HardyLittlewoodReport:
    lhs: float
    rhs: float
    measure: float
    tol: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.margin >= -self.tol


def hardy_littlewood_check(field: ScalarField, params: WeightParams, subset=None,
                           level: float | None = None, profile: DecreasingProfile | None = None,
                           tol_rel: float = 1e-6) -> HardyLittlewoodReport:
    """∫_E u |x|^ell dx  vs  ∫_0^{|E|_ell} u*(s) ds for u >= 0.

    ``subset`` is a boolean mask over triangles; alternatively ``level``
    selects the super-level set {u > level}.
    """
    if np.any(field.values < 0):
        raise ValueError("Hardy-Littlewood check needs a nonnegative field")
    mesh = field.mesh
    if profile is None:
        profile = decreasing_rearrangement(distribution_function(field, params))
    if level is not None:
        mu, integ = superlevel(mesh, field.values, np.array([level]), params.ell, with_integral=True)
        lhs, meas = float(integ[0]), float(mu[0])
    else:
        mask = np.ones(mesh.n_triangles, bool) if subset is None else np.asarray(subset, bool)
        rule = mesh.rule(params.ell)
        sel = mask[rule.elem]
        lhs = float(np.sum(rule.w[sel] * field.at_rule(rule)[sel]))
        meas = float(np.sum(rule.w[sel]))
    rhs = profile.integral(min(meas, profile.total))
    return HardyLittlewoodReport(lhs, rhs, meas, tol_rel * max(abs(rhs), 1e-300))
