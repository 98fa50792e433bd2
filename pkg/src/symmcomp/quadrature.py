"""Quadrature rules for integrands carrying the radial weight |x|^ell.

Triangles are sorted into three classes by the ratio of their distance
from the origin to their diameter:

* far   (ratio >= 12): 7-point degree-5 rule,
* mid   (3 <= ratio < 12): collapsed Gauss rule of degree 11,
* near  (ratio < 3): triangles whose closure holds the origin get the
  origin-fan rule. The triangle is written as a sum of triangles (0, P, Q)
  over its edges; on each of them the radial variable carries a
  Gauss-Jacobi rule for s^(ell+1) (exact for polynomial factors) and the
  edge parameter is split into panels graded geometrically with ratio 0.5
  toward the foot of the perpendicular from the origin. Near triangles
  that miss the origin are split 1:4 until every child falls in another
  class, so that no node leaves its element and P1 fields are never
  extrapolated.

Every rule is returned flattened: one row per quadrature node, with the
index of the owning element, the physical node and a weight that already
contains |x|^ell and the Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

FAR_RATIO = 12.0
NEAR_RATIO = 3.0
MAX_SPLIT_DEPTH = 40

# Dunavant degree-5 rule, barycentric coordinates, weights sum to 1.
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
TRI7_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_A1, _B1, _B1],
        [_B1, _A1, _B1],
        [_B1, _B1, _A1],
        [_A2, _B2, _B2],
        [_B2, _A2, _B2],
        [_B2, _B2, _A2],
    ]
)
TRI7_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


@lru_cache(maxsize=None)
def gauss_legendre01(m: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(m)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def gauss_jacobi01(m: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights on [0, 1] for the weight s**alpha (alpha > -1)."""
    x, w = roots_jacobi(m, 0.0, alpha)
    return 0.5 * (x + 1.0), w * 0.5 ** (alpha + 1.0)


@lru_cache(maxsize=None)
def collapsed_rule(m: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """Duffy-collapsed tensor rule on the reference triangle.

    Returns barycentric nodes (m*m, 3) and weights summing to 1.
    """
    u, wu = gauss_jacobi01_weight_1mu(m)
    v, wv = gauss_legendre01(m)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    xi = U
    eta = V * (1.0 - U)
    bary = np.stack([1.0 - xi - eta, xi, eta], axis=-1).reshape(-1, 3)
    w = 2.0 * W.reshape(-1)
    return bary, w


@lru_cache(maxsize=None)
def gauss_jacobi01_weight_1mu(m: int) -> tuple[np.ndarray, np.ndarray]:
    # weight (1 - u) on [0, 1]
    x, w = roots_jacobi(m, 1.0, 0.0)
    return 0.5 * (x + 1.0), w * 0.25


@dataclass(frozen=True)
class Rule:
    """Flattened quadrature rule over a batch of elements."""

    elem: np.ndarray  # (Q,) owning element index
    xy: np.ndarray  # (Q, 2) physical nodes
    w: np.ndarray  # (Q,) weights including |x|^ell and Jacobian

    def integrate(self, values: np.ndarray, n_elem: int | None = None) -> np.ndarray | float:
        """Sum ``values * w``; per element if ``n_elem`` is given."""
        if n_elem is None:
            return float(np.sum(values * self.w))
        return np.bincount(self.elem, weights=values * self.w, minlength=n_elem)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def point_segment_distance(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Distance from the origin to segments [P, Q] (batched)."""
    d = Q - P
    L2 = np.einsum("...i,...i->...", d, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(L2 > 0, -np.einsum("...i,...i->...", P, d) / L2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    foot = P + t[..., None] * d
    return np.hypot(foot[..., 0], foot[..., 1])


def triangle_origin_distance(P0: np.ndarray, P1: np.ndarray, P2: np.ndarray) -> np.ndarray:
    """Distance from the origin to closed triangles (0 when inside)."""
    c0 = _cross(P0, P1)
    c1 = _cross(P1, P2)
    c2 = _cross(P2, P0)
    inside = ((c0 >= 0) & (c1 >= 0) & (c2 >= 0)) | ((c0 <= 0) & (c1 <= 0) & (c2 <= 0))
    d = np.minimum(
        np.minimum(point_segment_distance(P0, P1), point_segment_distance(P1, P2)),
        point_segment_distance(P2, P0),
    )
    return np.where(inside, 0.0, d)


def graded_panels_batch(P: np.ndarray, Q: np.ndarray, max_levels: int = 60):
    """Panels for a batch of segments P->Q, graded toward the origin.

    Panels shrink geometrically (ratio 0.5) toward the parameter of the
    foot of the perpendicular from the origin, down to the scale of the
    line's distance from the origin.  Returns flat arrays ``(a, b, seg)``
    of panel ends in [0, 1] and the owning segment, ordered by segment.
    """
    d = Q - P
    L = np.hypot(d[:, 0], d[:, 1])
    scale = np.abs(_cross(P, Q)) / (L * L)
    tstar = -np.einsum("ij,ij->i", P, d) / (L * L)
    inner = (tstar > 0.0) & (tstar < 1.0)
    simple = (scale >= 0.5) & ~(inner & (scale < 1.0))
    E = len(P)
    g = np.flatnonzero(~simple)
    if not g.size:
        return np.zeros(E), np.ones(E), np.arange(E)
    sc = np.maximum(scale[g], 1e-300)
    ts = tstar[g]
    # candidates beyond step > 2 + |t*| fall outside (0, 1)
    need = int(np.max(np.ceil(np.log2((2.0 + np.abs(ts)) / sc)))) + 2
    steps = sc[:, None] * 2.0 ** np.arange(min(max_levels, max(need, 1)))[None, :]
    cands = np.concatenate(
        [
            np.zeros((g.size, 1)),
            np.ones((g.size, 1)),
            np.where(inner[g], ts, np.inf)[:, None],
            ts[:, None] - steps,
            ts[:, None] + steps,
        ],
        axis=1,
    )
    ok = (cands > 0.0) & (cands < 1.0)
    ok[:, :2] = True
    cands = np.sort(np.where(ok, cands, np.inf), axis=1)
    a, b = cands[:, :-1], cands[:, 1:]
    keep = np.isfinite(b) & (b > a)
    rows, _ = np.nonzero(keep)
    ga, gb, gseg = a[keep], b[keep], g[rows]
    s_idx = np.flatnonzero(simple)
    seg = np.concatenate([s_idx, gseg])
    order = np.argsort(seg, kind="stable")
    return (
        np.concatenate([np.zeros(s_idx.size), ga])[order],
        np.concatenate([np.ones(s_idx.size), gb])[order],
        seg[order],
    )


def graded_panels(P: np.ndarray, Q: np.ndarray, max_levels: int = 60) -> np.ndarray:
    """Breakpoints in [0, 1] for a single segment P->Q (see
    :func:`graded_panels_batch`)."""
    a, b, _ = graded_panels_batch(np.asarray(P, float)[None], np.asarray(Q, float)[None], max_levels)
    return np.concatenate([a[:1], b])


def _fan_rule(P0, P1, P2, idx, ell: float, m_t: int = 12, m_s: int = 8) -> Rule:
    """Origin-fan rule for a batch of triangles owned by elements ``idx``."""
    s_nodes, s_w = gauss_jacobi01(m_s, ell + 1.0)
    t_nodes, t_w = gauss_legendre01(m_t)
    P = np.concatenate([P0, P1, P2])
    Q = np.concatenate([P1, P2, P0])
    own = np.tile(idx, 3)
    cr = _cross(P, Q)
    scale = np.maximum(np.hypot(P[:, 0], P[:, 1]) * np.hypot(Q[:, 0], Q[:, 1]), 1e-300)
    live = np.abs(cr) > 1e-14 * scale  # edges through the origin span no area
    P, Q, own, cr = P[live], Q[live], own[live], cr[live]
    if not len(P):
        return Rule(np.zeros(0, int), np.zeros((0, 2)), np.zeros(0))
    a, b, e = graded_panels_batch(P, Q)
    t = a[:, None] + (b - a)[:, None] * t_nodes[None, :]
    wt = (b - a)[:, None] * t_w[None, :]
    xt = P[e][:, None, :] + t[..., None] * (Q - P)[e][:, None, :]
    base = wt * np.hypot(xt[..., 0], xt[..., 1]) ** ell * cr[e][:, None]
    pts = s_nodes[None, None, :, None] * xt[:, :, None, :]
    ww = base[:, :, None] * s_w[None, None, :]
    return Rule(np.repeat(own[e], m_t * m_s), pts.reshape(-1, 2), ww.reshape(-1))


def triangle_rule(P0: np.ndarray, P1: np.ndarray, P2: np.ndarray, ell: float) -> Rule:
    """Weighted rule for a batch of triangles given by vertex arrays (T, 2).

    Triangles may have either orientation; weights follow the signed area,
    so callers pass positively oriented triangles.
    """
    P0 = np.asarray(P0, float)
    P1 = np.asarray(P1, float)
    P2 = np.asarray(P2, float)
    T = P0.shape[0]
    if T == 0:
        return Rule(np.zeros(0, int), np.zeros((0, 2)), np.zeros(0))
    area = 0.5 * _cross(P1 - P0, P2 - P0)
    if ell == 0.0:
        return _bary_rule(np.arange(T), P0, P1, P2, area, TRI7_BARY, TRI7_W, 0.0)
    owner = np.arange(T)
    live = area != 0  # zero-area pieces (level cuts through a vertex) carry no mass
    P0, P1, P2, area, owner = P0[live], P1[live], P2[live], area[live], owner[live]
    parts = []
    for depth in range(MAX_SPLIT_DEPTH + 1):
        if not len(owner):
            break
        diam = np.maximum(
            np.maximum(np.linalg.norm(P1 - P0, axis=1), np.linalg.norm(P2 - P1, axis=1)),
            np.linalg.norm(P0 - P2, axis=1),
        )
        dist = triangle_origin_distance(P0, P1, P2)
        ratio = dist / diam
        far = np.flatnonzero(ratio >= FAR_RATIO)
        mid = np.flatnonzero((ratio >= NEAR_RATIO) & (ratio < FAR_RATIO))
        # the fan keeps its nodes inside the triangle only when the origin
        # lies in the closure; other near triangles are split first
        last = depth == MAX_SPLIT_DEPTH
        fan = np.flatnonzero((ratio < NEAR_RATIO) & ((dist == 0.0) | last))
        split = np.flatnonzero((ratio < NEAR_RATIO) & (dist > 0.0) & (not last))
        if far.size:
            parts.append(_bary_rule(owner[far], P0[far], P1[far], P2[far], area[far], TRI7_BARY, TRI7_W, ell))
        if mid.size:
            bary, w = collapsed_rule(6)
            parts.append(_bary_rule(owner[mid], P0[mid], P1[mid], P2[mid], area[mid], bary, w, ell))
        if fan.size:
            parts.append(_fan_rule(P0[fan], P1[fan], P2[fan], owner[fan], ell))
        P0, P1, P2, owner = _split4(P0[split], P1[split], P2[split], owner[split])
        area = 0.5 * _cross(P1 - P0, P2 - P0)
    if not parts:
        return Rule(np.zeros(0, int), np.zeros((0, 2)), np.zeros(0))
    # deterministic order: by element, stable
    elem = np.concatenate([r.elem for r in parts])
    order = np.argsort(elem, kind="stable")
    return Rule(
        elem[order],
        np.concatenate([r.xy for r in parts])[order],
        np.concatenate([r.w for r in parts])[order],
    )


def triangle_measure(P0: np.ndarray, P1: np.ndarray, P2: np.ndarray, ell: float, m: int = 12) -> np.ndarray:
    """∫_T |x|^ell dx for a batch of triangles (signed by orientation).

    With integrand 1 the signed edge fan is exact whatever the position of
    the origin, and its radial factor integrates in closed form, leaving a
    graded 1-D rule per edge.
    """
    P0, P1, P2 = (np.asarray(P, float) for P in (P0, P1, P2))
    T = P0.shape[0]
    if ell == 0.0:
        return 0.5 * _cross(P1 - P0, P2 - P0)
    P = np.concatenate([P0, P1, P2])
    Q = np.concatenate([P1, P2, P0])
    own = np.tile(np.arange(T), 3)
    cr = _cross(P, Q)
    scale = np.maximum(np.hypot(P[:, 0], P[:, 1]) * np.hypot(Q[:, 0], Q[:, 1]), 1e-300)
    live = np.abs(cr) > 1e-14 * scale
    P, Q, own, cr = P[live], Q[live], own[live], cr[live]
    out = np.zeros(T)
    if not len(P):
        return out
    tn, tw = gauss_legendre01(m)
    a, b, e = graded_panels_batch(P, Q)
    t = a[:, None] + (b - a)[:, None] * tn[None, :]
    xt = P[e][:, None, :] + t[..., None] * (Q - P)[e][:, None, :]
    edge = np.sum((b - a)[:, None] * tw[None, :] * np.hypot(xt[..., 0], xt[..., 1]) ** ell, axis=1)
    np.add.at(out, own[e], cr[e] * edge / (ell + 2.0))
    return out


def _split4(P0, P1, P2, owner):
    """Midpoint subdivision; children keep the parent's orientation."""
    M01, M12, M20 = 0.5 * (P0 + P1), 0.5 * (P1 + P2), 0.5 * (P2 + P0)
    return (
        np.concatenate([P0, M01, M20, M01]),
        np.concatenate([M01, P1, M12, M12]),
        np.concatenate([M20, M12, P2, M20]),
        np.tile(owner, 4),
    )


def _bary_rule(idx, P0, P1, P2, area, bary, w, ell) -> Rule:
    xy = (
        bary[None, :, 0:1] * P0[:, None, :]
        + bary[None, :, 1:2] * P1[:, None, :]
        + bary[None, :, 2:3] * P2[:, None, :]
    )
    ww = area[:, None] * w[None, :]
    if ell != 0.0:
        ww = ww * np.hypot(xy[..., 0], xy[..., 1]) ** ell
    return Rule(np.repeat(idx, len(w)), xy.reshape(-1, 2), ww.reshape(-1))


def segment_rule(P: np.ndarray, Q: np.ndarray, k: float, m: int = 5) -> Rule:
    """Weighted rule for ∫_[P,Q] g |x|^k dH^1 over a batch of segments.

    Segments whose supporting line passes within one length of the origin
    get graded panels; the rest use plain m-point Gauss.
    """
    P = np.asarray(P, float)
    Q = np.asarray(Q, float)
    E = P.shape[0]
    if E == 0:
        return Rule(np.zeros(0, int), np.zeros((0, 2)), np.zeros(0))
    d = Q - P
    L = np.hypot(d[:, 0], d[:, 1])
    dist = point_segment_distance(P, Q)
    tn, tw = gauss_legendre01(m)
    plain = np.flatnonzero((dist >= L) | (k == 0.0))
    close = np.flatnonzero((dist < L) & (k != 0.0))
    es, xs, ws = [], [], []
    if plain.size:
        xy = P[plain, None, :] + tn[None, :, None] * d[plain, None, :]
        w = L[plain, None] * tw[None, :]
        if k != 0.0:
            w = w * np.hypot(xy[..., 0], xy[..., 1]) ** k
        es.append(np.repeat(plain, m))
        xs.append(xy.reshape(-1, 2))
        ws.append(w.reshape(-1))
    if close.size:
        tn12, tw12 = gauss_legendre01(12)
        a, b, j = graded_panels_batch(P[close], Q[close])
        seg = close[j]
        t = (a[:, None] + (b - a)[:, None] * tn12[None, :]).reshape(-1)
        wt = ((b - a)[:, None] * tw12[None, :]).reshape(-1)
        seg = np.repeat(seg, 12)
        xy = P[seg] + t[:, None] * d[seg]
        es.append(seg)
        xs.append(xy)
        ws.append(wt * L[seg] * np.hypot(xy[:, 0], xy[:, 1]) ** k)
    elem = np.concatenate(es)
    order = np.argsort(elem, kind="stable")
    return Rule(elem[order], np.concatenate(xs)[order], np.concatenate(ws)[order])


def segment_params(rule: Rule, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Local parameter in [0, 1] of each node of a segment rule."""
    d = Q[rule.elem] - P[rule.elem]
    L2 = np.einsum("ij,ij->i", d, d)
    return np.einsum("ij,ij->i", rule.xy - P[rule.elem], d) / L2
