# barrier-hom/src/geometry.py
"""Unit-cell and micro meshes with duplicated interface traces.

Meshes are P1 triangulations of the unit square. Vertices on the interface
Sigma exist twice (one copy per phase) so the two traces can jump. Opposite
outer edges are identified through ``periodic_pairs`` (root, member); for the
laminate the wrapped line y2 = 0 = 1 is an interface component whose phase-2
copies live at y2 = 0 and are periodic roots of the y2 = 1 row.
"""
import hashlib
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from src.config import DEGENERATE_AREA, MICRO_SIZE_CAP, MIN_RESOLUTION
from src.errors import GeometryError

logger = logging.getLogger(__name__)

LAMINATE = "laminate"
DISK = "disk"
GEOMETRY_KINDS = (LAMINATE, DISK)

_GAUSS_T = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])
_COORD_SCALE = 1e9


@dataclass(frozen=True)
class GeometrySpec:
    kind: str = LAMINATE
    theta: float = 0.5
    radius: float = 0.25
    n_seg: int = 32

    def validate(self):
        if self.kind not in GEOMETRY_KINDS:
            raise GeometryError(f"unknown geometry kind {self.kind!r}; expected one of {GEOMETRY_KINDS}")
        if self.kind == LAMINATE:
            if not 0.0 < self.theta < 1.0:
                raise GeometryError(f"laminate theta must lie in (0, 1), got {self.theta}")
        else:
            if not 0.05 <= self.radius <= 0.45:
                raise GeometryError(f"disk radius must lie in [0.05, 0.45], got {self.radius}")
            if self.n_seg < 8 or self.n_seg % 8 != 0:
                raise GeometryError(f"disk n_seg must be a positive multiple of 8, got {self.n_seg}")

    def phase_of(self, points) -> np.ndarray:
        """Phase tag (1 or 2) of cell points in [0, 1)^2."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if self.kind == LAMINATE:
            return np.where(pts[:, 1] < self.theta, 1, 2)
        dist = np.hypot(pts[:, 0] - 0.5, pts[:, 1] - 0.5)
        return np.where(dist < self.radius, 2, 1)

    def interior_point(self, phase: int) -> np.ndarray:
        if self.kind == LAMINATE:
            y2 = 0.5 * self.theta if phase == 1 else 0.5 * (1.0 + self.theta)
            return np.array([0.5, y2])
        return np.array([0.5, 0.5]) if phase == 2 else np.array([0.0, 0.0])

    def sigma_quadrature(self, quad_n: int):
        """Composite 2-point Gauss rule on the exact interface, quad_n pieces per component.

        Returns (points, weights, breakpoints); breakpoints are the piece ends.
        """
        if self.kind == LAMINATE:
            s = np.arange(quad_n + 1) / quad_n
            h = 1.0 / quad_n
            gx = (s[:-1, None] + h * _GAUSS_T[None, :]).ravel()
            pts, brk = [], []
            for y2 in (0.0, self.theta):
                pts.append(np.column_stack([gx, np.full_like(gx, y2)]))
                brk.append(np.column_stack([s, np.full_like(s, y2)]))
            weights = np.full(2 * gx.size, 0.5 * h)
            return np.vstack(pts), weights, np.vstack(brk)
        phi = 2.0 * np.pi * np.arange(quad_n + 1) / quad_n
        dphi = 2.0 * np.pi / quad_n
        gphi = (phi[:-1, None] + dphi * _GAUSS_T[None, :]).ravel()
        r = self.radius
        pts = np.column_stack([0.5 + r * np.cos(gphi), 0.5 + r * np.sin(gphi)])
        brk = np.column_stack([0.5 + r * np.cos(phi), 0.5 + r * np.sin(phi)])
        weights = np.full(gphi.size, 0.5 * r * dphi)
        return pts, weights, brk

    def describe(self) -> str:
        if self.kind == LAMINATE:
            return f"laminate(theta={self.theta!r})"
        return f"disk(radius={self.radius!r}, n_seg={self.n_seg})"

    def key(self) -> str:
        """Short stable hash of the geometry, used to tag outputs."""
        return hashlib.sha1(self.describe().encode("utf-8")).hexdigest()[:12]


@dataclass
class InterfaceQuadrature:
    points: np.ndarray     # (ng, 2) physical points
    weights: np.ndarray    # (ng,)
    normals: np.ndarray    # (ng, 2) outward from phase 1
    dofs1: np.ndarray      # (ng, 2) phase-1 trace vertex ids of the edge
    dofs2: np.ndarray      # (ng, 2) phase-2 trace vertex ids of the edge
    shape: np.ndarray      # (ng, 2) P1 edge basis values at the point

    @property
    def measure(self) -> float:
        return float(self.weights.sum())


@dataclass
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    tri_phase: np.ndarray
    vertex_phase: np.ndarray
    iface_side1: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    iface_side2: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    iface_normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    periodic_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    scale: Optional[int] = None   # K on micro meshes: cell data is read at (K x) mod 1

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def corners(self) -> np.ndarray:
        return self.vertices[self.triangles]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        c = self.corners
        e1 = c[:, 1] - c[:, 0]
        e2 = c[:, 2] - c[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def gradients(self) -> np.ndarray:
        """Constant P1 basis gradients, shape (nt, 3, 2)."""
        c = self.corners
        two_a = 2.0 * self.signed_areas
        g = np.empty((self.n_triangles, 3, 2))
        for p in range(3):
            q, r = (p + 1) % 3, (p + 2) % 3
            g[:, p, 0] = (c[:, q, 1] - c[:, r, 1]) / two_a
            g[:, p, 1] = (c[:, r, 0] - c[:, q, 0]) / two_a
        return g

    @cached_property
    def midpoints(self) -> np.ndarray:
        """Edge midpoints per triangle, (nt, 3, 2); midpoint m is opposite vertex m."""
        c = self.corners
        return 0.5 * np.stack([c[:, 1] + c[:, 2], c[:, 2] + c[:, 0], c[:, 0] + c[:, 1]], axis=1)

    @property
    def phase_areas(self):
        a = self.areas
        return float(a[self.tri_phase == 1].sum()), float(a[self.tri_phase == 2].sum())

    def phase_vertices(self, phase: int) -> np.ndarray:
        return np.flatnonzero(self.vertex_phase == phase)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        v = self.vertices
        tol = 1e-12
        return (v[:, 0] < tol) | (v[:, 0] > 1 - tol) | (v[:, 1] < tol) | (v[:, 1] > 1 - tol)

    def coefficient_points(self, points: np.ndarray, scope: str) -> np.ndarray:
        """Map physical quadrature points to the argument an expression expects."""
        if scope == "macro" or self.scale is None:
            return points
        return np.mod(points * self.scale, 1.0)

    def interface_quadrature(self) -> InterfaceQuadrature:
        return interface_quadrature(self)


@dataclass
class UnitCellMesh(TriMesh):
    geometry: Optional[GeometrySpec] = None
    resolution: int = 0
    metadata: Dict[str, float] = field(default_factory=dict)


@dataclass
class MicroMesh(TriMesh):
    geometry: Optional[GeometrySpec] = None
    resolution: int = 0
    epsilon: float = 1.0
    dirichlet_nodes_1: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dirichlet_nodes_2: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cell_vertex: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    interface_weighting: str = "unweighted"
    outside_hypotheses: bool = False


@dataclass
class MacroMesh(TriMesh):
    resolution: int = 0

    def locate(self, points):
        """Containing triangle and barycentric coordinates of each point.

        Candidates come from the structured square; on shared edges the
        lower-index triangle wins.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        n = self.resolution
        i = np.clip(np.ceil(pts[:, 0] * n).astype(np.int64) - 1, 0, n - 1)
        j = np.clip(np.ceil(pts[:, 1] * n).astype(np.int64) - 1, 0, n - 1)
        cand = 4 * (j * n + i)[:, None] + np.arange(4)[None, :]
        c = self.vertices[self.triangles[cand]]               # (n, 4, 3, 2)
        bary = _barycentric(c, pts[:, None, :])               # (n, 4, 3)
        inside = bary.min(axis=2) >= -1e-12
        first = np.where(inside.any(axis=1), inside.argmax(axis=1), bary.min(axis=2).argmax(axis=1))
        rows = np.arange(pts.shape[0])
        return cand[rows, first], bary[rows, first]


def _barycentric(c, p):
    v0 = c[..., 1, :] - c[..., 0, :]
    v1 = c[..., 2, :] - c[..., 0, :]
    v2 = p - c[..., 0, :]
    det = v0[..., 0] * v1[..., 1] - v0[..., 1] * v1[..., 0]
    l1 = (v2[..., 0] * v1[..., 1] - v2[..., 1] * v1[..., 0]) / det
    l2 = (v0[..., 0] * v2[..., 1] - v0[..., 1] * v2[..., 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


# -------- structured pieces --------

def _crossed_triangles(a, b, c, d, m):
    """Four triangles per square (corners a b c d counter-clockwise, center m)."""
    return np.stack([
        np.stack([a, b, m], axis=-1),
        np.stack([b, c, m], axis=-1),
        np.stack([c, d, m], axis=-1),
        np.stack([d, a, m], axis=-1),
    ], axis=-2).reshape(-1, 3)


def build_square_mesh(n: int) -> MacroMesh:
    """Uniform crossed triangulation of the unit square, no interface."""
    if n < MIN_RESOLUTION:
        raise GeometryError(f"resolution must be at least {MIN_RESOLUTION}, got {n}")
    grid = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)       # [j, i]
    centers = (n + 1) ** 2 + np.arange(n * n).reshape(n, n)
    xs = np.arange(n + 1) / n
    gx, gy = np.meshgrid(xs, xs)
    cx, cy = np.meshgrid((np.arange(n) + 0.5) / n, (np.arange(n) + 0.5) / n)
    vertices = np.vstack([np.column_stack([gx.ravel(), gy.ravel()]),
                          np.column_stack([cx.ravel(), cy.ravel()])])
    tris = _crossed_triangles(grid[:-1, :-1], grid[:-1, 1:], grid[1:, 1:], grid[1:, :-1], centers)
    return MacroMesh(
        vertices=vertices,
        triangles=tris.astype(np.int64),
        tri_phase=np.ones(tris.shape[0], dtype=np.int64),
        vertex_phase=np.ones(vertices.shape[0], dtype=np.int64),
        resolution=n,
    )


def _merge_rings(inner, a_in, outer, a_out):
    """Triangulate the band between two closed rings swept by angle (turns in [0, 1))."""
    ni, no = len(inner), len(outer)
    a_in = np.append(a_in, 1.0)
    a_out = np.append(a_out, 1.0)
    tris = []
    i = j = 0
    while i < ni or j < no:
        if j < no and (i == ni or a_out[j + 1] <= a_in[i + 1] + 1e-12):
            tris.append((inner[i % ni], outer[j], outer[(j + 1) % no]))
            j += 1
        else:
            tris.append((inner[i], outer[j % no], inner[(i + 1) % ni]))
            i += 1
    return tris


def _periodic_pairs(vertices, vertex_phase):
    """(root, member) pairs identifying x=0 with x=1 and y=0 with y=1 per phase."""
    n = vertices.shape[0]
    keys = np.round(vertices * _COORD_SCALE).astype(np.int64)
    one = int(round(_COORD_SCALE))
    lookup = {(int(vertex_phase[v]), int(keys[v, 0]), int(keys[v, 1])): v for v in range(n)}

    rows, cols = [], []
    for v in range(n):
        ph, kx, ky = int(vertex_phase[v]), int(keys[v, 0]), int(keys[v, 1])
        for partner, on_edge in (((ph, kx + one, ky), kx == 0), ((ph, kx, ky + one), ky == 0)):
            w = lookup.get(partner) if on_edge else None
            if w is not None:
                rows.append(v)
                cols.append(w)
    graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)

    # root is the class vertex nearest the origin corner, ties by index
    order = np.lexsort((np.arange(n), keys.sum(axis=1), labels))
    sizes = np.bincount(labels)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    pairs = []
    for label in np.flatnonzero(sizes > 1):
        members = order[starts[label]:starts[label] + sizes[label]]
        pairs.extend((int(members[0]), int(v)) for v in members[1:])
    pairs.sort()
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def _finish(mesh: UnitCellMesh) -> UnitCellMesh:
    areas = mesh.signed_areas
    if areas.min() < DEGENERATE_AREA:
        bad = int(np.argmin(areas))
        raise GeometryError(f"degenerate or inverted triangle {bad} (signed area {areas[bad]:.3e})")
    mesh.periodic_pairs = _periodic_pairs(mesh.vertices, mesh.vertex_phase)
    return mesh


def _build_laminate(g: GeometrySpec, n: int) -> UnitCellMesh:
    jj = g.theta * n
    J = int(round(jj))
    if abs(jj - J) > 1e-9 or J <= 0 or J >= n:
        raise GeometryError(f"laminate theta*N must be an integer in (0, N); theta={g.theta}, N={n}")

    verts, phases = [], []
    id1 = -np.ones((n + 1, n + 1), dtype=np.int64)
    id2 = -np.ones((n + 1, n + 1), dtype=np.int64)
    for j in range(n + 1):
        for i in range(n + 1):
            if j <= J:
                id1[j, i] = len(verts)
                verts.append((i / n, j / n))
                phases.append(1)
            if j >= J:
                id2[j, i] = len(verts)
                verts.append((i / n, j / n))
                phases.append(2)
    wrap = np.arange(len(verts), len(verts) + n + 1)
    for i in range(n + 1):
        verts.append((i / n, 0.0))
        phases.append(2)
    centers = np.arange(len(verts), len(verts) + n * n).reshape(n, n)
    for j in range(n):
        for i in range(n):
            verts.append(((i + 0.5) / n, (j + 0.5) / n))
            phases.append(1 if j < J else 2)

    lower = _crossed_triangles(id1[:J, :-1], id1[:J, 1:], id1[1:J + 1, 1:], id1[1:J + 1, :-1], centers[:J])
    upper = _crossed_triangles(id2[J:n, :-1], id2[J:n, 1:], id2[J + 1:, 1:], id2[J + 1:, :-1], centers[J:])
    tris = np.vstack([lower, upper])
    tri_phase = np.concatenate([np.ones(lower.shape[0]), 2 * np.ones(upper.shape[0])]).astype(np.int64)

    # interface components: wrapped line y2 = 0 (phase 1 above) and y2 = theta (phase 1 below)
    side1 = np.vstack([np.column_stack([id1[0, :-1], id1[0, 1:]]),
                       np.column_stack([id1[J, :-1], id1[J, 1:]])])
    side2 = np.vstack([np.column_stack([wrap[:-1], wrap[1:]]),
                       np.column_stack([id2[J, :-1], id2[J, 1:]])])
    normals = np.vstack([np.tile([0.0, -1.0], (n, 1)), np.tile([0.0, 1.0], (n, 1))])

    mesh = UnitCellMesh(
        vertices=np.array(verts, dtype=float),
        triangles=tris.astype(np.int64),
        tri_phase=tri_phase,
        vertex_phase=np.array(phases, dtype=np.int64),
        iface_side1=side1, iface_side2=side2, iface_normals=normals,
        geometry=g, resolution=n,
        metadata={"interface_components": 2.0},
    )
    return _finish(mesh)


def _block_half_width(g: GeometrySpec, n: int) -> int:
    return min(n // 2, max(1, math.ceil(1.25 * g.radius * n)))


def _build_disk(g: GeometrySpec, n: int) -> UnitCellMesh:
    if n % 2:
        raise GeometryError(f"disk meshes need an even resolution, got N={n}")
    if g.n_seg > 4 * n:
        raise GeometryError(f"disk n_seg={g.n_seg} exceeds 4*N={4 * n}")
    h = n // 2
    r = g.radius
    last_error = None
    for m in range(_block_half_width(g, n), h + 1):
        try:
            return _build_disk_with_block(g, n, m)
        except GeometryError as e:
            last_error = e
    raise GeometryError(f"cannot stitch disk r={r} n_seg={g.n_seg} into N={n} grid: {last_error}")


def _build_disk_with_block(g: GeometrySpec, n: int, m: int) -> UnitCellMesh:
    h = n // 2
    r = g.radius
    lo, hi = h - m, h + m
    verts, phases = [], []

    grid = -np.ones((n + 1, n + 1), dtype=np.int64)
    for j in range(n + 1):
        for i in range(n + 1):
            if lo < i < hi and lo < j < hi:
                continue
            grid[j, i] = len(verts)
            verts.append((i / n, j / n))
            phases.append(1)

    outside = np.ones((n, n), dtype=bool)
    outside[lo:hi, lo:hi] = False
    centers = -np.ones((n, n), dtype=np.int64)
    for j in range(n):
        for i in range(n):
            if outside[j, i]:
                centers[j, i] = len(verts)
                verts.append(((i + 0.5) / n, (j + 0.5) / n))
                phases.append(1)

    ns = g.n_seg
    turns = np.arange(ns) / ns
    circle = np.column_stack([0.5 + r * np.cos(2 * np.pi * turns), 0.5 + r * np.sin(2 * np.pi * turns)])
    c1 = np.arange(len(verts), len(verts) + ns)
    verts.extend(map(tuple, circle))
    phases.extend([1] * ns)
    c2 = np.arange(len(verts), len(verts) + ns)
    verts.extend(map(tuple, circle))
    phases.extend([2] * ns)

    # inner rings, graded so tangential spacing tracks the radial one
    rings = max(1, min(int(round(r * n)), ns // 4))
    counts = {rings: ns}
    for level in range(rings - 1, 0, -1):
        cnt = counts[level + 1]
        if cnt % 16 == 0 and 2 * np.pi * (r * level / rings) / (cnt // 2) <= 1.5 * r / rings:
            cnt //= 2
        counts[level] = cnt
    ring_ids = {rings: c2}
    for level in range(rings - 1, 0, -1):
        cnt = counts[level]
        rad = r * level / rings
        t = np.arange(cnt) / cnt
        ring_ids[level] = np.arange(len(verts), len(verts) + cnt)
        verts.extend(zip(0.5 + rad * np.cos(2 * np.pi * t), 0.5 + rad * np.sin(2 * np.pi * t)))
        phases.extend([2] * cnt)
    center = len(verts)
    verts.append((0.5, 0.5))
    phases.append(2)

    # outer structured part
    outer_tris = []
    for j in range(n):
        for i in range(n):
            if outside[j, i]:
                outer_tris.append(_crossed_triangles(
                    grid[j, i], grid[j, i + 1], grid[j + 1, i + 1], grid[j + 1, i], centers[j, i]))
    outer_tris = np.vstack(outer_tris) if outer_tris else np.zeros((0, 3), dtype=np.int64)

    # block perimeter, counter-clockwise from angle 0
    perim = [(hi, j) for j in range(h, hi)]
    perim += [(i, hi) for i in range(hi, lo, -1)]
    perim += [(lo, j) for j in range(hi, lo, -1)]
    perim += [(i, lo) for i in range(lo, hi)]
    perim += [(hi, j) for j in range(lo, h)]
    perim_ids = np.array([grid[j, i] for i, j in perim], dtype=np.int64)
    pv = np.array([(i / n - 0.5, j / n - 0.5) for i, j in perim])
    perim_turns = np.mod(np.arctan2(pv[:, 1], pv[:, 0]), 2 * np.pi) / (2 * np.pi)
    perim_turns[0] = 0.0
    strip = _merge_rings(c1, turns, perim_ids, perim_turns)

    inner = []
    for level in range(rings - 1, 0, -1):
        a, b = ring_ids[level], ring_ids[level + 1]
        inner += _merge_rings(a, np.arange(len(a)) / len(a), b, np.arange(len(b)) / len(b))
    first = ring_ids[1] if rings > 1 else c2
    inner += [(center, first[k], first[(k + 1) % len(first)]) for k in range(len(first))]

    p1 = np.vstack([outer_tris, np.array(strip, dtype=np.int64)])
    p2 = np.array(inner, dtype=np.int64)
    tris = np.vstack([p1, p2])
    tri_phase = np.concatenate([np.ones(p1.shape[0]), 2 * np.ones(p2.shape[0])]).astype(np.int64)

    side1 = np.column_stack([c1, np.roll(c1, -1)])
    side2 = np.column_stack([c2, np.roll(c2, -1)])
    tangent = np.roll(circle, -1, axis=0) - circle
    normals = np.column_stack([-tangent[:, 1], tangent[:, 0]])
    normals /= np.linalg.norm(normals, axis=1)[:, None]

    polygon_area = 0.5 * ns * r * r * math.sin(2 * math.pi / ns)
    mesh = UnitCellMesh(
        vertices=np.array(verts, dtype=float),
        triangles=tris,
        tri_phase=tri_phase,
        vertex_phase=np.array(phases, dtype=np.int64),
        iface_side1=side1, iface_side2=side2, iface_normals=normals,
        geometry=g, resolution=n,
        metadata={
            "interface_components": 1.0,
            "block_half_width": float(m) / n,
            "inner_rings": float(rings),
            "area_deficit": math.pi * r * r - polygon_area,
        },
    )
    return _finish(mesh)


def build_unit_cell_mesh(g: GeometrySpec, n: int) -> UnitCellMesh:
    g.validate()
    if n < MIN_RESOLUTION:
        raise GeometryError(f"cell resolution must be at least {MIN_RESOLUTION}, got {n}")
    mesh = _build_laminate(g, n) if g.kind == LAMINATE else _build_disk(g, n)
    logger.debug("cell mesh %s N=%d: %d vertices, %d triangles",
                 g.describe(), n, mesh.n_vertices, mesh.n_triangles)
    return mesh


def reciprocal_integer(epsilon: float) -> int:
    if not epsilon > 0:
        raise GeometryError(f"epsilon must be positive, got {epsilon}")
    k = int(round(1.0 / epsilon))
    if k < 1 or abs(1.0 / epsilon - k) > 1e-9 * k:
        raise GeometryError(f"epsilon={epsilon} is not the reciprocal of an integer")
    return k


def build_micro_mesh(g: GeometrySpec, n: int, epsilon: float, size_cap: int = MICRO_SIZE_CAP) -> MicroMesh:
    """Tile the unit-cell mesh K x K times at scale epsilon = 1/K over the unit square."""
    k = reciprocal_integer(epsilon)
    if k * n > size_cap:
        raise GeometryError(f"micro mesh K*N = {k * n} exceeds the size cap {size_cap}")
    cell = build_unit_cell_mesh(g, n)
    nv = cell.n_vertices

    root = np.arange(nv)
    shift = np.zeros((nv, 2), dtype=np.int64)
    for m_id, s_id in cell.periodic_pairs:
        root[s_id] = m_id
        shift[s_id] = np.round(cell.vertices[s_id] - cell.vertices[m_id]).astype(np.int64)

    tq, tp = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    tp, tq = tp.ravel(), tq.ravel()                              # tile (p, q), row-major in q
    px = tp[:, None] + shift[None, :, 0]
    qy = tq[:, None] + shift[None, :, 1]
    codes = (px * (k + 1) + qy) * nv + root[None, :]
    uniq, first, inverse = np.unique(codes.ravel(), return_index=True, return_inverse=True)
    inverse = inverse.reshape(codes.shape)

    roots = uniq % nv
    offs = uniq // nv
    ox, oy = offs // (k + 1), offs % (k + 1)
    vertices = (cell.vertices[roots] + np.column_stack([ox, oy])) / k
    vertex_phase = cell.vertex_phase[roots]

    tile_rows = np.arange(k * k)[:, None, None]
    triangles = inverse[tile_rows, cell.triangles[None, :, :]].reshape(-1, 3)
    tri_phase = np.tile(cell.tri_phase, k * k)
    side1 = inverse[tile_rows, cell.iface_side1[None, :, :]].reshape(-1, 2)
    side2 = inverse[tile_rows, cell.iface_side2[None, :, :]].reshape(-1, 2)
    normals = np.tile(cell.iface_normals, (k * k, 1))

    mesh = MicroMesh(
        vertices=vertices,
        triangles=triangles.astype(np.int64),
        tri_phase=tri_phase,
        vertex_phase=vertex_phase,
        iface_side1=side1, iface_side2=side2, iface_normals=normals,
        scale=k,
        geometry=g, resolution=n,
        epsilon=1.0 / k,
        cell_vertex=roots.astype(np.int64),
    )
    on_boundary = mesh.boundary_mask
    mesh.dirichlet_nodes_1 = np.flatnonzero(on_boundary & (vertex_phase == 1))
    mesh.dirichlet_nodes_2 = np.flatnonzero(on_boundary & (vertex_phase == 2))
    if mesh.dirichlet_nodes_2.size == 0 or mesh.dirichlet_nodes_1.size == 0:
        mesh.outside_hypotheses = True
        logger.warning("geometry %s: a phase never meets the outer boundary; "
                       "configuration lies outside the homogenization hypotheses", g.describe())
    logger.debug("micro mesh eps=1/%d: %d vertices, %d triangles, %d interface edges",
                 k, mesh.n_vertices, mesh.n_triangles, side1.shape[0])
    return mesh


def interface_quadrature(mesh: TriMesh) -> InterfaceQuadrature:
    """Two-point Gauss rule on every interface edge (unweighted surface measure)."""
    s1, s2 = mesh.iface_side1, mesh.iface_side2
    a = mesh.vertices[s1[:, 0]]
    b = mesh.vertices[s1[:, 1]]
    length = np.linalg.norm(b - a, axis=1)
    t = _GAUSS_T
    points = (a[:, None, :] * (1 - t)[None, :, None] + b[:, None, :] * t[None, :, None]).reshape(-1, 2)
    weights = np.repeat(0.5 * length, 2)
    shape = np.tile(np.column_stack([1 - t, t]), (s1.shape[0], 1))
    return InterfaceQuadrature(
        points=points,
        weights=weights,
        normals=np.repeat(mesh.iface_normals, 2, axis=0),
        dofs1=np.repeat(s1, 2, axis=0),
        dofs2=np.repeat(s2, 2, axis=0),
        shape=shape,
    )


class TriangleLocator:
    """Bucket-grid point location over a subset of triangles.

    Candidates in a bucket are tried in ascending triangle order and a later
    one only wins when it contains the point strictly better, so points on
    shared edges resolve to the lower-index triangle.
    """

    def __init__(self, mesh: TriMesh, tris: Optional[np.ndarray] = None, grid_n: Optional[int] = None):
        self.tris = np.arange(mesh.n_triangles) if tris is None else np.asarray(tris, dtype=np.int64)
        c = mesh.vertices[mesh.triangles[self.tris]]
        self.origin = c[:, 0]
        self.e1 = c[:, 1] - c[:, 0]
        self.e2 = c[:, 2] - c[:, 0]
        self.det = self.e1[:, 0] * self.e2[:, 1] - self.e1[:, 1] * self.e2[:, 0]

        self.lo = mesh.vertices.min(axis=0)
        extent = np.maximum(mesh.vertices.max(axis=0) - self.lo, 1e-300)
        self.g = grid_n or max(1, int(math.sqrt(max(len(self.tris), 1) / 2.0)))
        self.size = extent / self.g
        ix0 = self._bucket(c.min(axis=1), -1e-9)
        ix1 = self._bucket(c.max(axis=1), 1e-9)

        buckets, owners = [], []
        span = (ix1 - ix0).max(axis=0) if len(self.tris) else np.zeros(2, dtype=np.int64)
        local = np.arange(len(self.tris))
        for dx in range(int(span[0]) + 1):
            for dy in range(int(span[1]) + 1):
                keep = (ix0[:, 0] + dx <= ix1[:, 0]) & (ix0[:, 1] + dy <= ix1[:, 1])
                buckets.append((ix0[keep, 1] + dy) * self.g + ix0[keep, 0] + dx)
                owners.append(local[keep])
        buckets = np.concatenate(buckets) if buckets else np.zeros(0, dtype=np.int64)
        owners = np.concatenate(owners) if owners else np.zeros(0, dtype=np.int64)
        order = np.lexsort((owners, buckets))
        self.bucket_tris = owners[order]
        self.starts = np.searchsorted(buckets[order], np.arange(self.g * self.g + 1))

    def _bucket(self, pts, nudge):
        idx = np.floor((pts - self.lo) / self.size + nudge).astype(np.int64)
        return np.clip(idx, 0, self.g - 1)

    def _bary(self, local, pts):
        v = pts - self.origin[local]
        l1 = (v[:, 0] * self.e2[local, 1] - v[:, 1] * self.e2[local, 0]) / self.det[local]
        l2 = (self.e1[local, 0] * v[:, 1] - self.e1[local, 1] * v[:, 0]) / self.det[local]
        return np.column_stack([1.0 - l1 - l2, l1, l2])

    def locate(self, points, strict: bool = True):
        """Triangle id and barycentric coordinates for each point, ((n,), (n, 3)).

        With ``strict=False`` points outside every candidate get id -1 instead of an error.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        b = self._bucket(pts, 0.0)
        flat = b[:, 1] * self.g + b[:, 0]
        start = self.starts[flat]
        count = self.starts[flat + 1] - start
        best = -np.ones(pts.shape[0], dtype=np.int64)
        score = np.full(pts.shape[0], -np.inf)
        bary = np.zeros((pts.shape[0], 3))
        for j in range(int(count.max()) if count.size else 0):
            rows = np.flatnonzero(count > j)
            local = self.bucket_tris[start[rows] + j]
            lam = self._bary(local, pts[rows])
            s = lam.min(axis=1)
            better = s > np.where(score[rows] >= 0.0, 1e-12, score[rows] + 1e-14)
            better &= s > score[rows]
            hit = rows[better]
            best[hit] = local[better]
            score[hit] = s[better]
            bary[hit] = lam[better]
        missing = np.flatnonzero(best < 0)
        if not strict:
            outside = (best < 0) | (score < -1e-9)
            return np.where(outside, -1, self.tris[np.maximum(best, 0)]), bary
        if missing.size:
            raise GeometryError(f"{missing.size} points lie outside the located mesh region")
        if score.size and score.min() < -1e-8:
            logger.debug("point location: %d points outside every candidate triangle (worst %.3e)",
                         int((score < -1e-8).sum()), score.min())
        return self.tris[best], bary
