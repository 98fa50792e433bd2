"""Weighted measure, weighted perimeter, symmetrized ball and the
isoperimetric inequality with weights |x|^(ell/p') on the boundary and
|x|^ell on the volume."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import HypothesisError
from .mesh import TriMesh, check_closed


@dataclass(frozen=True)
class WeightParams:
    """Dimension ``n``, exponent ``p`` and weight exponent ``ell``.

    Nothing is rejected at construction; use :meth:`hypotheses` to inspect
    (H1)/(H2) and :meth:`require` to enforce them.
    """

    n: int = 2
    p: float = 2.0
    ell: float = -1.0

    @property
    def p_conj(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def k(self) -> float:
        """Perimeter weight exponent ell / p'."""
        return self.ell / self.p_conj

    @property
    def omega_n(self) -> float:
        return math.pi ** (self.n / 2) / math.gamma(self.n / 2 + 1)

    @property
    def surface_const(self) -> float:
        """n * omega_n, the (n-1)-measure of the unit sphere."""
        return self.n * self.omega_n

    @property
    def iso_exponent(self) -> float:
        n, p, l = self.n, self.p, self.ell
        return (l * (p - 1) + (n - 1) * p) / (p * (n + l))

    @property
    def gamma(self) -> float:
        return gamma_constant(self)

    @property
    def h1(self) -> bool:
        return self.p >= self.n

    @property
    def h2(self) -> bool:
        return -self.n < self.ell < 0

    @property
    def classical(self) -> bool:
        return self.ell == 0.0

    @property
    def pointwise_condition(self) -> bool:
        """Pointwise-comparison condition: p = n = 2, or p > 2 and
        ell <= -n + (p - n) / (p - 2)."""
        n, p, l = self.n, self.p, self.ell
        if p == 2 and n == 2:
            return True
        if p > 2:
            return l <= -n + (p - n) / (p - 2) + 1e-12
        return False

    def hypotheses(self) -> dict[str, bool]:
        return {"H1": self.h1, "H2": self.h2, "pointwise": self.pointwise_condition}

    def require(self, allow_classical: bool = True) -> None:
        """Raise :class:`HypothesisError` unless (H1) and (H2) hold
        (``ell == 0`` passes when ``allow_classical``)."""
        if self.n < 2:
            raise HypothesisError(f"n = {self.n} < 2")
        if not self.h1:
            raise HypothesisError(f"hypothesis (H1) violated: p = {self.p} < n = {self.n}")
        if not (self.h2 or (allow_classical and self.classical)):
            raise HypothesisError(
                f"hypothesis (H2) violated: ell = {self.ell} not in (-{self.n}, 0)"
            )

    def ball_measure(self, r):
        """ell-measure of the centred ball of radius r."""
        return self.surface_const / (self.n + self.ell) * np.asarray(r, float) ** (self.n + self.ell)

    def ball_radius(self, measure):
        """Inverse of :meth:`ball_measure`."""
        return ((self.n + self.ell) * np.asarray(measure, float) / self.surface_const) ** (
            1.0 / (self.n + self.ell)
        )

    def sphere_perimeter(self, r, k: float | None = None):
        """k-weighted perimeter of the centred sphere of radius r."""
        k = self.k if k is None else k
        return self.surface_const * np.asarray(r, float) ** (self.n - 1 + k)


@dataclass(frozen=True)
class SymmetrizedBall:
    radius: float
    params: WeightParams

    @property
    def measure(self) -> float:
        return float(self.params.ball_measure(self.radius))

    @property
    def perimeter(self) -> float:
        """Weighted perimeter P_{ell/p'} of the ball."""
        return float(self.params.sphere_perimeter(self.radius))


@dataclass
class IsoperimetricReport:
    lhs: float
    rhs: float
    margin: float
    tol: float
    hypotheses: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.margin >= -self.tol

    @property
    def relative_margin(self) -> float:
        return self.margin / self.lhs


def weighted_measure(mesh: TriMesh, ell: float) -> float:
    """∫_Ω |x|^ell dx."""
    if ell <= -2:  # meshes are planar
        raise ValueError(f"non-integrable weight: ell = {ell} <= -n")
    return float(np.sum(mesh.rule(ell).w))


def weighted_perimeter(mesh: TriMesh, k: float) -> float:
    """∫_∂Ω |x|^k dH^1 with 5-point Gauss per boundary edge."""
    check_closed(mesh.boundary)
    if k <= -1:
        raise ValueError(f"boundary weight exponent k = {k} must exceed -1")
    return float(np.sum(mesh.edge_rule(k).w))


def gamma_constant(params: WeightParams) -> float:
    n, p, l = params.n, params.p, params.ell
    return (n * params.omega_n) ** ((l + p) / (p * (n + l))) * (l + n) ** params.iso_exponent


def symmetrized_ball(measure: float, params: WeightParams) -> SymmetrizedBall:
    if not measure > 0:
        raise ValueError(f"empty domain: weighted measure {measure}")
    return SymmetrizedBall(float(params.ball_radius(measure)), params)


def isoperimetric_check(mesh: TriMesh, params: WeightParams, tol_rel: float = 1e-9) -> IsoperimetricReport:
    """Compare P_{ell/p'}(Ω) with γ |Ω|_ell^{iso_exponent}."""
    params.require()
    lhs = weighted_perimeter(mesh, params.k)
    rhs = params.gamma * weighted_measure(mesh, params.ell) ** params.iso_exponent
    return IsoperimetricReport(
        lhs=lhs,
        rhs=rhs,
        margin=lhs - rhs,
        tol=tol_rel * lhs,
        hypotheses={"H1": params.h1, "H2": params.h2},
    )
