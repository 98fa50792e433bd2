"""Triangle meshes of planar domains: container, generators, text format, refinement."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidMeshError

TAU_GEOM_REL = 1e-12


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming, positively oriented triangulation with oriented boundary.

    ``boundary`` holds edges (i, j) oriented so that the domain lies on the
    left, i.e. the outer normal points to the right of i -> j.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    markers: np.ndarray
    origin_element: int | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        b = np.ascontiguousarray(self.boundary, dtype=np.int64).reshape(-1, 2)
        mk = np.ascontiguousarray(self.markers, dtype=np.int64).reshape(-1)
        for name, arr in (("vertices", v), ("triangles", t), ("boundary", b), ("markers", mk)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self._validate()
        if self.origin_element is None:
            object.__setattr__(self, "origin_element", self._locate_origin())

    # -- construction ------------------------------------------------------
    @classmethod
    def from_triangles(cls, vertices, triangles, marker_fn=None) -> "TriMesh":
        """Build from vertices and triangles; orientation is fixed and the
        boundary derived. ``marker_fn(midpoints) -> ints`` labels edges."""
        v = np.asarray(vertices, float)
        t = np.asarray(triangles, np.int64).copy()
        a = _signed_areas(v, t)
        flip = a < 0
        t[flip] = t[flip][:, [0, 2, 1]]
        b = boundary_edges(t)
        if marker_fn is None:
            mk = np.ones(len(b), np.int64)
        else:
            mk = np.asarray(marker_fn(0.5 * (v[b[:, 0]] + v[b[:, 1]])), np.int64)
        return cls(v, t, b, mk)

    def _validate(self):
        v, t, b = self.vertices, self.triangles, self.boundary
        if v.ndim != 2 or v.shape[1] != 2 or t.ndim != 2 or t.shape[1] != 3:
            raise InvalidMeshError("invalid mesh: bad array shapes")
        if len(t) == 0:
            raise InvalidMeshError("invalid mesh: no triangles")
        if t.min() < 0 or t.max() >= len(v):
            raise InvalidMeshError("invalid mesh: triangle index out of range")
        if len(self.markers) != len(b):
            raise InvalidMeshError("invalid mesh: one marker per boundary edge required")
        areas = _signed_areas(v, t)
        scale = self.diameter ** 2
        if np.any(areas <= 1e-14 * scale):
            raise InvalidMeshError("invalid mesh: degenerate or negatively oriented triangle")
        derived = boundary_edges(t)
        if len(derived) != len(b) or set(map(tuple, derived.tolist())) != set(map(tuple, b.tolist())):
            raise InvalidMeshError("invalid mesh: boundary edges do not match the triangulation")
        # conformity: an interior edge is shared by exactly two triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise InvalidMeshError("invalid mesh: non-manifold edge")
        check_closed(b)
        tau = TAU_GEOM_REL * self.diameter
        from .quadrature import point_segment_distance

        d = point_segment_distance(v[b[:, 0]], v[b[:, 1]])
        if np.any(d <= tau):
            raise InvalidMeshError("invalid mesh: the origin lies on the boundary")

    def _locate_origin(self) -> int | None:
        from .quadrature import triangle_origin_distance

        v, t = self.vertices, self.triangles
        d = triangle_origin_distance(v[t[:, 0]], v[t[:, 1]], v[t[:, 2]])
        hit = np.flatnonzero(d == 0.0)
        return int(hit[0]) if hit.size else None

    # -- geometry ------------------------------------------------------------
    @property
    def diameter(self) -> float:
        ext = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.hypot(*ext))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.triangles)

    @property
    def h(self) -> float:
        """Maximum edge length."""
        v, t = self.vertices, self.triangles
        lens = [np.linalg.norm(v[t[:, i]] - v[t[:, (i + 1) % 3]], axis=1) for i in range(3)]
        return float(np.max(lens))

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary)

    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def rule(self, ell: float):
        """Cached weighted triangle rule for this mesh."""
        key = ("tri", float(ell))
        if key not in self._cache:
            from .quadrature import triangle_rule

            self._cache[key] = triangle_rule(*self.corners(), float(ell))
        return self._cache[key]

    def edge_rule(self, k: float, m: int = 5):
        key = ("edge", float(k), m)
        if key not in self._cache:
            from .quadrature import segment_rule

            v, b = self.vertices, self.boundary
            self._cache[key] = segment_rule(v[b[:, 0]], v[b[:, 1]], float(k), m)
        return self._cache[key]

    def barycentric(self, elem: np.ndarray, xy: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of points ``xy`` in triangles ``elem``."""
        P0, P1, P2 = (c[elem] for c in self.corners())
        d1, d2, r = P1 - P0, P2 - P0, xy - P0
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        return np.stack([1.0 - l1 - l2, l1, l2], axis=1)

    def scaled(self, c: float) -> "TriMesh":
        return TriMesh(self.vertices * c, self.triangles, self.boundary, self.markers)

    def translated(self, offset) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(offset, float), self.triangles, self.boundary, self.markers)

    def submesh(self, mask: np.ndarray) -> "TriMesh":
        """Mesh made of the selected triangles (vertices renumbered)."""
        t = self.triangles[np.asarray(mask)]
        used, inv = np.unique(t, return_inverse=True)
        return TriMesh.from_triangles(self.vertices[used], inv.reshape(-1, 3))


def _signed_areas(v: np.ndarray, t: np.ndarray) -> np.ndarray:
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def boundary_edges(t: np.ndarray) -> np.ndarray:
    """Directed edges used by exactly one triangle, in triangle orientation."""
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, idx, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    once = np.sort(idx[counts == 1])
    return e[once]


def check_closed(b: np.ndarray) -> None:
    """Raise unless the directed boundary edges form closed curves."""
    if len(b) == 0:
        raise InvalidMeshError("not rectifiable as closed curve: empty boundary")
    out_deg = np.bincount(b[:, 0])
    in_deg = np.bincount(b[:, 1], minlength=len(out_deg))
    out_deg = np.pad(out_deg, (0, max(0, len(in_deg) - len(out_deg))))
    used = (out_deg + in_deg) > 0
    if np.any(out_deg[used] != 1) or np.any(in_deg[used] != 1):
        raise InvalidMeshError("not rectifiable as closed curve")


# ---------------------------------------------------------------------------
# generators


def _ring_strip(inner: np.ndarray, outer: np.ndarray, ang_in: np.ndarray, ang_out: np.ndarray):
    """Triangulate the band between two closed rings of vertex ids.

    Angles are increasing in [0, 2pi); the walk merges both sequences.
    """
    tris = []
    ni, no = len(inner), len(outer)
    i = j = 0
    while i < ni or j < no:
        ai = ang_in[i + 1] if i + 1 < ni else ang_in[0] + 2 * np.pi
        ao = ang_out[j + 1] if j + 1 < no else ang_out[0] + 2 * np.pi
        if (ai <= ao and i < ni) or j >= no:
            tris.append((inner[i % ni], inner[(i + 1) % ni], outer[j % no]))
            i += 1
        else:
            tris.append((inner[i % ni], outer[(j + 1) % no], outer[j % no]))
            j += 1
    return tris


def disk(radius: float = 1.0, h: float = 0.1, center=(0.0, 0.0)) -> TriMesh:
    """Concentric-ring mesh of a disk; ring k carries 6k vertices."""
    N = max(2, int(math.ceil(radius / h - 1e-9)))
    pts = [np.zeros(2)]
    rings = [np.array([0])]
    angles = [np.array([0.0])]
    for k in range(1, N + 1):
        m = 6 * k
        th = 2 * np.pi * np.arange(m) / m
        r = radius * k / N
        start = len(pts)
        pts.extend(np.stack([r * np.cos(th), r * np.sin(th)], axis=1))
        rings.append(np.arange(start, start + m))
        angles.append(th)
    tris = [(0, rings[1][j], rings[1][(j + 1) % 6]) for j in range(6)]
    for k in range(2, N + 1):
        tris += _ring_strip(rings[k - 1], rings[k], angles[k - 1], angles[k])
    v = np.array(pts) + np.asarray(center, float)
    return TriMesh.from_triangles(v, np.array(tris))


def ellipse(a: float = 1.0, b: float = 0.6, h: float = 0.1, center=(0.0, 0.0)) -> TriMesh:
    """Affine image of a unit-disk ring mesh with semi-axes (a, b)."""
    base = disk(1.0, h / max(a, b))
    v = base.vertices * np.array([a, b]) + np.asarray(center, float)
    return TriMesh.from_triangles(v, base.triangles)


def annulus(r_in: float = 0.5, r_out: float = 1.0, h: float = 0.1, center=(0.0, 0.0)) -> TriMesh:
    N = max(1, int(math.ceil((r_out - r_in) / h - 1e-9)))
    pts, rings, angles = [], [], []
    for k in range(N + 1):
        r = r_in + (r_out - r_in) * k / N
        m = max(6, int(math.ceil(2 * np.pi * r / h)))
        th = 2 * np.pi * np.arange(m) / m
        start = len(pts)
        pts.extend(np.stack([r * np.cos(th), r * np.sin(th)], axis=1))
        rings.append(np.arange(start, start + m))
        angles.append(th)
    tris = []
    for k in range(1, N + 1):
        tris += _ring_strip(rings[k - 1], rings[k], angles[k - 1], angles[k])
    v = np.array(pts) + np.asarray(center, float)
    mid_r = 0.5 * (r_in + r_out)
    c = np.asarray(center, float)
    return TriMesh.from_triangles(
        v, np.array(tris), lambda m: np.where(np.hypot(*(m - c).T) < mid_r, 2, 1)
    )


def _grid(x0, x1, y0, y1, nx, ny, keep=None):
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    v = np.stack([X.ravel(), Y.ravel()], axis=1)
    vid = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    tris = []
    for i in range(nx):
        for j in range(ny):
            if keep is not None and not keep(0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])):
                continue
            a, b, c, d = vid[i, j], vid[i + 1, j], vid[i + 1, j + 1], vid[i, j + 1]
            # alternate diagonals so the pattern is symmetric about the centre
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    tris = np.array(tris)
    used, inv = np.unique(tris, return_inverse=True)
    return v[used], inv.reshape(-1, 3)


def rectangle(a: float = 1.0, b: float = 0.5, h: float = 0.1, center=(0.0, 0.0)) -> TriMesh:
    """Rectangle [-a, a] x [-b, b] shifted by ``center``."""
    nx = max(2, 2 * int(math.ceil(a / h - 1e-9)))
    ny = max(2, 2 * int(math.ceil(b / h - 1e-9)))
    v, t = _grid(-a, a, -b, b, nx, ny)
    return TriMesh.from_triangles(v + np.asarray(center, float), t, _side_markers(a, b, center))


def square(a: float = 1.0, h: float = 0.1, center=(0.0, 0.0)) -> TriMesh:
    """Square [-a, a]^2 shifted by ``center``."""
    return rectangle(a, a, h, center)


def l_shape(a: float = 1.0, h: float = 0.1, center=(0.0, 0.0)) -> TriMesh:
    """[-a, a]^2 with the quadrant (0, a) x (0, a) removed, shifted by ``center``.

    With ``center`` at the origin the re-entrant corner sits on the origin
    and the mesh is rejected; pass an offset.
    """
    n = max(2, 2 * int(math.ceil(a / h - 1e-9)))
    v, t = _grid(-a, a, -a, a, n, n, keep=lambda x, y: not (x > 0 and y > 0))
    return TriMesh.from_triangles(v + np.asarray(center, float), t)


def _side_markers(a, b, center):
    c = np.asarray(center, float)

    def fn(m):
        x, y = (m - c).T
        out = np.ones(len(m), np.int64)
        out[np.isclose(x, a)] = 1
        out[np.isclose(y, b)] = 2
        out[np.isclose(x, -a)] = 3
        out[np.isclose(y, -b)] = 4
        return out

    return fn


GENERATORS = {
    "disk": disk,
    "ellipse": ellipse,
    "annulus": annulus,
    "square": square,
    "rectangle": rectangle,
    "lshape": l_shape,
    "l_shape": l_shape,
}

# keyword aliases accepted in textual shape specs
_ALIASES = {"r": "radius", "R": "radius", "r_in": "r_in", "r_out": "r_out", "offset": "center", "c": "center"}


def parse_shape_spec(spec: str) -> TriMesh:
    """Build a mesh from text like ``"disk r=1 h=0.05 offset=(0.5,0)"``."""
    tokens = spec.replace(", ", ",").split()
    if not tokens:
        raise ValueError("empty shape spec")
    shape = tokens[0].lower()
    if shape not in GENERATORS:
        raise ValueError(f"unknown shape {shape!r}")
    kwargs = {}
    for tok in tokens[1:]:
        key, _, val = tok.partition("=")
        key = _ALIASES.get(key, key)
        if key == "center":
            kwargs[key] = tuple(float(x) for x in val.strip("()[]").split(","))
        else:
            kwargs[key] = float(val)
    return make(shape, **kwargs)


def make(shape: str, **kwargs) -> TriMesh:
    try:
        gen = GENERATORS[shape.lower()]
    except KeyError:
        raise ValueError(f"unknown shape {shape!r}") from None
    try:
        return gen(**kwargs)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {shape!r}: {exc}") from None


def refine(mesh: TriMesh) -> TriMesh:
    """Uniform midpoint subdivision (each triangle into four)."""
    v, t = mesh.vertices, mesh.triangles
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    key = np.sort(e, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mids = 0.5 * (v[uniq[:, 0]] + v[uniq[:, 1]])
    nv = len(v)
    T = len(t)
    m01, m12, m20 = (nv + inv[k * T:(k + 1) * T] for k in range(3))
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    new_t = np.concatenate(
        [
            np.stack([a, m01, m20], 1),
            np.stack([m01, b, m12], 1),
            np.stack([m20, m12, c], 1),
            np.stack([m01, m12, m20], 1),
        ]
    )
    new_v = np.concatenate([v, mids])
    # boundary markers follow the parent edge
    parent = {tuple(sorted(ed)): mk for ed, mk in zip(mesh.boundary.tolist(), mesh.markers.tolist())}
    mid_of = {tuple(k): nv + i for i, k in enumerate(uniq.tolist())}
    child_marker = {}
    for (i, j), mk in parent.items():
        mm = mid_of[(i, j)]
        child_marker[tuple(sorted((i, mm)))] = mk
        child_marker[tuple(sorted((mm, j)))] = mk
    b = boundary_edges(new_t)
    markers = np.array([child_marker[tuple(sorted(ed))] for ed in b.tolist()], np.int64)
    return TriMesh(new_v, new_t, b, markers)


# ---------------------------------------------------------------------------
# text format

HEADER = "symmmesh v1"


def write_mesh(mesh: TriMesh, path) -> None:
    lines = [f"{HEADER} {mesh.n_vertices} {mesh.n_triangles} {len(mesh.boundary)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines += [f"{i} {j} {m}" for (i, j), m in zip(mesh.boundary.tolist(), mesh.markers.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> TriMesh:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    head = lines[0].split()
    if " ".join(head[:2]) != HEADER or len(head) != 5:
        raise InvalidMeshError(f"invalid mesh: bad header {lines[0]!r}")
    nv, nt, nb = map(int, head[2:])
    if len(lines) != 1 + nv + nt + nb:
        raise InvalidMeshError("invalid mesh: record count does not match header")
    body = lines[1:]
    v = np.array([[float(x) for x in ln.split()] for ln in body[:nv]]).reshape(nv, 2)
    t = np.array([[int(x) for x in ln.split()] for ln in body[nv:nv + nt]], np.int64).reshape(nt, 3)
    bm = np.array([[int(x) for x in ln.split()] for ln in body[nv + nt:]], np.int64).reshape(nb, 3)
    return TriMesh(v, t, bm[:, :2], bm[:, 2])


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Vertex values of a continuous piecewise-linear function on ``mesh``."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if len(v) != self.mesh.n_vertices:
            raise ValueError("field needs one value per mesh vertex")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, mesh: TriMesh, fn) -> "ScalarField":
        x, y = mesh.vertices.T
        return cls(mesh, np.broadcast_to(np.asarray(fn(x, y), float), x.shape))

    @classmethod
    def constant(cls, mesh: TriMesh, c: float) -> "ScalarField":
        return cls(mesh, np.full(mesh.n_vertices, float(c)))

    def at_rule(self, rule) -> np.ndarray:
        """Values at the nodes of a triangle rule built on ``mesh``."""
        bary = self.mesh.barycentric(rule.elem, rule.xy)
        tv = self.values[self.mesh.triangles[rule.elem]]
        return np.einsum("ij,ij->i", bary, tv)

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.mesh, self.values * c)

    __rmul__ = __mul__
