"""Triangle-mesh queries used by the losses: distances, sampling, sections, volume."""

import warnings
from dataclasses import dataclass

import numpy as np

from tetmotion import _backend
from tetmotion.diff import ops
from tetmotion.errors import ContractViolation, InvalidArgument
from tetmotion.mesh import SurfaceMesh

DOMAIN_VOLUME = 8.0
ON_SURFACE_EPS = 1e-12


class NearestNeighborIndex:
    """Exact Euclidean nearest neighbour over a fixed point set.

    Ties resolve to the lowest point index.
    """

    def __init__(self, points):
        pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise InvalidArgument("cannot index an empty point set")
        self.points = pts
        self._index = _backend.kernels.nearest_build(pts)

    def __len__(self):
        return len(self.points)

    def query(self, queries):
        """Return ``(index, squared distance)`` arrays for each query point."""
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        return _backend.kernels.nearest_query(self._index, q)


@dataclass(frozen=True)
class PlaneSpec:
    normal: tuple
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if n.shape != (3,) or not np.isfinite(n).all():
            raise InvalidArgument("plane normal must be a finite 3-vector")
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise InvalidArgument(f"plane normal must have unit length, got {np.linalg.norm(n)}")
        object.__setattr__(self, "normal", tuple(float(x) for x in n))
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def z(cls, offset):
        return cls((0.0, 0.0, 1.0), offset)

    def signed(self, points):
        return np.asarray(points) @ np.asarray(self.normal) - self.offset


@dataclass(frozen=True)
class DistanceResult:
    """Per-query distances.  ``signed`` is False when the mesh was open and the
    values fell back to unsigned distance."""

    values: np.ndarray
    closest: np.ndarray
    face: np.ndarray
    signed: bool


def _as_queries(query):
    q = np.asarray(query, dtype=np.float64)
    return q.reshape(-1, 3), q.ndim == 1


def _require_triangles(mesh):
    if mesh.is_empty:
        raise InvalidArgument("mesh has no triangles")


def winding_number(mesh, query):
    """Generalized winding number; scalar for one point, array for many."""
    _require_triangles(mesh)
    q, single = _as_queries(query)
    d2, _, _ = _backend.kernels.closest_on_triangles(mesh.positions, mesh.triangles, q)
    if np.any(d2 <= ON_SURFACE_EPS ** 2):
        raise ContractViolation("winding number is undefined for points on the surface")
    w = _backend.kernels.winding_numbers(mesh.positions, mesh.triangles, q)
    return float(w[0]) if single else w


def signed_distance(mesh, query):
    """Exact distance to the mesh, negative where the winding number exceeds 1/2.

    On an open mesh the sign is meaningless; unsigned values are returned,
    ``signed`` is False, and a ``RuntimeWarning`` is emitted.
    """
    _require_triangles(mesh)
    q, single = _as_queries(query)
    d2, closest, face = _backend.kernels.closest_on_triangles(mesh.positions, mesh.triangles, q)
    dist = np.sqrt(d2)
    closed = mesh.is_closed
    if closed:
        off = dist > ON_SURFACE_EPS
        inside = np.zeros(len(q), dtype=bool)
        if off.any():
            w = _backend.kernels.winding_numbers(mesh.positions, mesh.triangles, q[off])
            inside[off] = w > 0.5
        dist = np.where(inside, -dist, dist)
    else:
        warnings.warn("mesh is not closed; returning unsigned distances", RuntimeWarning,
                      stacklevel=2)
    if single:
        return DistanceResult(float(dist[0]), closest[0], int(face[0]), closed)
    return DistanceResult(dist, closest, face, closed)


# sampling ------------------------------------------------------------------

@dataclass(frozen=True)
class SurfaceSamples:
    points: np.ndarray  # (n, 3)
    face: np.ndarray  # (n,)
    bary: np.ndarray  # (n, 3), rows sum to 1

    def __len__(self):
        return len(self.points)


def sample_surface(mesh, count, seed):
    """Area-weighted uniform samples with their triangle and barycentric weights."""
    if int(count) != count or count < 1:
        raise InvalidArgument(f"sample count must be a positive integer, got {count}")
    areas = mesh.face_areas() if not mesh.is_empty else np.zeros(0)
    total = areas.sum()
    if not total > 0:
        raise InvalidArgument("cannot sample a mesh with zero total area")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas)
    face = np.searchsorted(cdf, rng.random(count) * total, side="right")
    face = np.minimum(face, len(areas) - 1)
    # a zero-area face can only be picked at a cdf plateau edge; move to the next positive one
    face = _skip_zero_area(face, areas)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    return SurfaceSamples(barycentric_points(mesh.positions, mesh.triangles, face, bary), face, bary)


def _skip_zero_area(face, areas):
    bad = areas[face] <= 0
    if bad.any():
        positive = np.flatnonzero(areas > 0)
        j = np.minimum(np.searchsorted(positive, face[bad]), len(positive) - 1)
        face = face.copy()
        face[bad] = positive[j]
    return face


def barycentric_points(positions, triangles, face, bary):
    """Points at fixed barycentric coordinates; differentiable when ``positions`` is a node."""
    index = triangles[face]
    if hasattr(positions, "tape"):
        return ops.combine(positions, index, bary)
    p = np.asarray(positions)
    return (bary[:, :, None] * p[index]).sum(axis=1)


# plane sections ------------------------------------------------------------

@dataclass(frozen=True)
class SectionEdges:
    """Crossing mesh edges for one plane: each output point is ``p[a] + t (p[b] - p[a])``
    averaged over its ``pairs`` entries (one entry for endpoints, two for midpoints)."""

    a: np.ndarray  # (m,) mesh vertex indices of crossing-edge starts
    b: np.ndarray
    points_index: np.ndarray  # (P, 2) rows into a/b
    points_weight: np.ndarray  # (P, 2)


def section_edges(mesh, plane):
    """Crossing edges of ``plane`` per triangle, laid out as endpoint, endpoint, midpoint."""
    if mesh.is_empty:
        return SectionEdges(np.zeros(0, np.int64), np.zeros(0, np.int64),
                            np.zeros((0, 2), np.int64), np.zeros((0, 2)))
    above = plane.signed(mesh.positions) > 0
    tri = mesh.triangles
    cls = above[tri]
    crossing = np.flatnonzero(cls.any(axis=1) & ~cls.all(axis=1))
    if len(crossing) == 0:
        return SectionEdges(np.zeros(0, np.int64), np.zeros(0, np.int64),
                            np.zeros((0, 2), np.int64), np.zeros((0, 2)))
    t = tri[crossing]
    c = cls[crossing]
    # the lone vertex is the one whose class differs from the other two
    lone = np.where(c[:, 1] == c[:, 2], 0, np.where(c[:, 0] == c[:, 2], 1, 2))
    rows = np.arange(len(t))
    v0 = t[rows, lone]
    v1 = t[rows, (lone + 1) % 3]
    v2 = t[rows, (lone + 2) % 3]
    a = np.stack([v0, v0], axis=1).ravel()
    b = np.stack([v1, v2], axis=1).ravel()
    m = len(t)
    e0 = 2 * np.arange(m)
    e1 = e0 + 1
    idx = np.stack([np.stack([e0, e0], 1), np.stack([e1, e1], 1), np.stack([e0, e1], 1)], axis=1)
    w = np.broadcast_to(np.array([[1.0, 0.0], [1.0, 0.0], [0.5, 0.5]]), (m, 3, 2))
    return SectionEdges(a, b, idx.reshape(-1, 2), w.reshape(-1, 2).copy())


def _edge_plane_points(pa, pb, normal, offset):
    delta = pb - pa
    den = delta @ normal
    t = (offset - pa @ normal) / den
    return pa + t[:, None] * delta, t, den


def plane_section(mesh, plane):
    """Section points: both edge crossings and the midpoint for every cut triangle.

    A plane that only touches vertices yields no points (a vertex exactly on
    the plane counts as below it).
    """
    sec = section_edges(mesh, plane)
    if len(sec.a) == 0:
        return np.zeros((0, 3))
    n = np.asarray(plane.normal)
    pts, _, _ = _edge_plane_points(mesh.positions[sec.a], mesh.positions[sec.b], n, plane.offset)
    out = (sec.points_weight[:, :, None] * pts[sec.points_index]).sum(axis=1)
    # snap residual rounding back onto the plane
    return out - np.outer(out @ n - plane.offset, n)


def plane_section_node(positions, sec, plane):
    """Differentiable section points for a fixed crossing pattern ``sec``."""
    tape = positions.tape
    n = np.asarray(plane.normal)
    pv = positions.value
    pa, pb = pv[sec.a], pv[sec.b]
    pts, t, den = _edge_plane_points(pa, pb, n, plane.offset)
    delta = pb - pa
    count = len(pv)

    def vjp(g):
        # moving either endpoint slides the crossing along the plane only
        proj = g - (np.einsum("ij,ij->i", g, delta) / den)[:, None] * n[None, :]
        ga = (1.0 - t)[:, None] * proj
        gb = t[:, None] * proj
        grad = np.empty_like(pv)
        idx = np.concatenate([sec.a, sec.b])
        for d in range(3):
            grad[:, d] = np.bincount(idx, np.concatenate([ga[:, d], gb[:, d]]), minlength=count)
        return (grad,)

    crossings = ops.custom(tape, pts, (positions,), vjp)
    return ops.combine(crossings, sec.points_index, sec.points_weight)


# volume --------------------------------------------------------------------

def enclosed_volume(mesh):
    """Divergence-theorem volume; positive for outward-wound closed meshes."""
    if not mesh.is_closed:
        raise ContractViolation("enclosed volume needs a closed mesh")
    if mesh.is_empty:
        return 0.0
    a, b, c = mesh.triangle_corners()
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def normalized_volume(mesh):
    """Enclosed volume as a fraction of the [-1, 1]^3 domain."""
    v = enclosed_volume(mesh)
    if v < 0:
        raise ContractViolation(f"negative enclosed volume {v}; mesh orientation is inverted")
    return v / DOMAIN_VOLUME


def volume_node(positions, triangles):
    """Differentiable enclosed volume of a fixed triangulation."""
    pv = positions.value
    a, b, c = pv[triangles[:, 0]], pv[triangles[:, 1]], pv[triangles[:, 2]]
    value = np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0
    count = len(pv)
    flat = triangles.T.ravel()

    def vjp(g):
        parts = np.concatenate([np.cross(b, c), np.cross(c, a), np.cross(a, b)]) * (float(g) / 6.0)
        grad = np.empty_like(pv)
        for d in range(3):
            grad[:, d] = np.bincount(flat, parts[:, d], minlength=count)
        return (grad,)

    return ops.custom(positions.tape, value, (positions,), vjp)


# primitive meshes ----------------------------------------------------------

def _orient_outward(positions, triangles):
    mesh = SurfaceMesh(positions, triangles)
    a, b, c = mesh.triangle_corners()
    if np.einsum("ij,ij->i", a, np.cross(b, c)).sum() < 0:
        return mesh.flipped()
    return mesh


def icosphere(radius=0.5, subdivisions=3, center=(0.0, 0.0, 0.0)):
    """Subdivided icosahedron projected onto a sphere."""
    phi = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
             (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
             (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    pos = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return _orient_outward(pos, np.array(faces))


def box_mesh(size=1.0, subdivisions=0):
    """Axis-aligned box centred at the origin; each face split into an n x n grid."""
    size = np.broadcast_to(np.asarray(size, dtype=np.float64), (3,))
    n = subdivisions + 1
    lin = np.linspace(-0.5, 0.5, n + 1)
    positions = []
    triangles = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = [a for a in range(3) if a != axis]
            uu, vv = np.meshgrid(lin, lin, indexing="ij")
            p = np.zeros((n + 1, n + 1, 3))
            p[..., axis] = 0.5 * sign
            p[..., u_ax] = uu
            p[..., v_ax] = vv
            base = sum(len(x) for x in positions)
            positions.append(p.reshape(-1, 3))
            ij = np.arange((n + 1) ** 2).reshape(n + 1, n + 1) + base
            q00, q10, q01, q11 = ij[:-1, :-1], ij[1:, :-1], ij[:-1, 1:], ij[1:, 1:]
            t = np.concatenate([np.stack([q00, q10, q11], -1).reshape(-1, 3),
                                np.stack([q00, q11, q01], -1).reshape(-1, 3)])
            # flip so the face normal points along ``sign``
            if (np.cross(np.eye(3)[u_ax], np.eye(3)[v_ax])[axis] > 0) != (sign > 0):
                t = t[:, ::-1]
            triangles.append(t)
    pos = np.concatenate(positions) * size
    tri = np.concatenate(triangles)
    # weld the shared border vertices of adjacent faces
    key = np.round(pos / size * 2 * n).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    pos = pos[first[order]]
    tri = remap[inverse.reshape(-1)][tri]
    return _orient_outward(pos, tri)


def capsule(radius=0.3, half_length=0.3, segments=24, rings=8):
    """Cylinder of ``half_length`` along z capped with hemispheres."""
    lat = np.linspace(0.0, np.pi / 2, rings + 1)[1:]  # from pole towards the equator
    theta = np.linspace(0.0, 2 * np.pi, segments, endpoint=False)
    ring_z = []
    ring_r = []
    for phi in lat:
        ring_z.append(half_length + radius * np.cos(phi))
        ring_r.append(radius * np.sin(phi))
    zs = ring_z + [-z for z in reversed(ring_z)]
    rs = ring_r + list(reversed(ring_r))
    positions = [np.array([0.0, 0.0, half_length + radius])]
    for z, r in zip(zs, rs):
        positions.append(np.stack([r * np.cos(theta), r * np.sin(theta), np.full(segments, z)], 1))
    positions.append(np.array([0.0, 0.0, -half_length - radius]))
    pos = np.vstack(positions)
    tri = []
    k = np.arange(segments)
    nxt = (k + 1) % segments
    first = 1
    tri += list(zip(np.zeros(segments, int), first + k, first + nxt))
    for ring in range(len(zs) - 1):
        a = 1 + ring * segments
        b = a + segments
        tri += list(zip(a + k, b + k, b + nxt))
        tri += list(zip(a + k, b + nxt, a + nxt))
    last = 1 + (len(zs) - 1) * segments
    bottom = len(pos) - 1
    tri += list(zip(np.full(segments, bottom), last + nxt, last + k))
    return _orient_outward(pos, np.array(tri, dtype=np.int64))


def primitive(name, **kwargs):
    makers = {"icosphere": icosphere, "box": box_mesh, "capsule": capsule}
    if name not in makers:
        raise InvalidArgument(f"unknown base shape {name!r}; expected one of {sorted(makers)}")
    return makers[name](**kwargs)
