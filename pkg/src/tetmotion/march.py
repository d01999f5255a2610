"""Differentiable marching tetrahedra.

Vertices with ``sdf < 0`` are inside; zero counts as outside.  Triangle
winding makes face normals point toward the outside (positive) region for
positively oriented tets.

The case table is derived once from a reference tet instead of being typed
in: within a tet the interpolated SDF is affine, so its zero set is a plane
and a triangle is correctly wound iff its normal agrees with the gradient of
that affine function.  Any positively oriented tet is an orientation
preserving affine image of the reference, so the table holds for all of them.
"""

from dataclasses import dataclass

import numpy as np

from tetmotion import _backend
from tetmotion.diff import ops
from tetmotion.errors import ContractViolation, InvalidArgument, NumericError
from tetmotion.mesh import Provenance, SurfaceMesh
from tetmotion.tetgrid import TET_EDGES

_EDGE_ID = {tuple(e): i for i, e in enumerate(TET_EDGES.tolist())}


def _edge(a, b):
    return _EDGE_ID[(min(a, b), max(a, b))]


def _orient(tri, pos, grad):
    p = pos[list(tri)]
    n = np.cross(p[1] - p[0], p[2] - p[0])
    return tri if n @ grad > 0 else (tri[0], tri[2], tri[1])


def _build_case_table():
    ref = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=np.float64)
    table = np.full((16, 2, 3), -1, dtype=np.int64)
    counts = np.zeros(16, dtype=np.int64)
    for case in range(16):
        inside = [i for i in range(4) if case >> i & 1]
        outside = [i for i in range(4) if not case >> i & 1]
        s = np.where([case >> i & 1 for i in range(4)], -1.0, 1.0)
        grad = s[1:] - s[0]  # gradient of the affine interpolant on the reference tet
        mids = (ref[TET_EDGES[:, 0]] + ref[TET_EDGES[:, 1]]) / 2
        if len(inside) in (0, 4):
            tris = []
        elif len(inside) in (1, 3):
            lone = inside[0] if len(inside) == 1 else outside[0]
            others = [i for i in range(4) if i != lone]
            tris = [tuple(_edge(lone, o) for o in others)]
        else:
            a, b = inside
            c, d = outside
            quad = (_edge(a, c), _edge(b, c), _edge(b, d), _edge(a, d))
            tris = [(quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])]
        tris = [_orient(t, mids, grad) for t in tris]
        counts[case] = len(tris)
        for j, t in enumerate(tris):
            table[case, j] = t
    return table, counts


CASE_TABLE, CASE_COUNTS = _build_case_table()


def classify_tet(sdf4):
    """Case index: bit ``i`` set iff ``sdf4[i] < 0``."""
    s = np.asarray(sdf4, dtype=np.float64)
    if s.shape != (4,):
        raise InvalidArgument("classify_tet expects four values")
    if not np.isfinite(s).all():
        raise NumericError("non-finite sdf value in tet")
    return int(((s < 0) * (1 << np.arange(4))).sum())


def edge_crossing(va, vb, sa, sb):
    """Zero crossing on segment ``va -> vb``; returns ``(point, t)``."""
    sa = float(sa)
    sb = float(sb)
    if (sa < 0) == (sb < 0):
        raise ContractViolation(f"edge does not cross the surface (sa={sa}, sb={sb})")
    va = np.asarray(va, dtype=np.float64)
    vb = np.asarray(vb, dtype=np.float64)
    t = sa / (sa - sb)
    return va + t * (vb - va), t


def edge_crossing_partials(va, vb, sa, sb):
    """Jacobian pieces of :func:`edge_crossing`: d/dsa, d/dsb (3-vectors), d/dva, d/dvb (scalars times I)."""
    den = (sa - sb) ** 2
    delta = np.asarray(vb, dtype=np.float64) - np.asarray(va, dtype=np.float64)
    t = sa / (sa - sb)
    return delta * (-sb / den), delta * (sa / den), 1.0 - t, t


@dataclass(frozen=True)
class _Topology:
    edges: np.ndarray  # (K, 2) crossing grid edges, sorted keys
    triangles: np.ndarray  # (F, 3) into edges
    tri_tet: np.ndarray
    tri_local: np.ndarray
    vertex_tet: np.ndarray


def surface_topology(tets, sdf):
    """Crossing edges and triangles for a sign pattern; independent of positions."""
    sdf = np.asarray(sdf, dtype=np.float64)
    if not np.isfinite(sdf).all():
        bad = int(np.flatnonzero(~np.isfinite(sdf))[0])
        raise NumericError(f"non-finite sdf at vertex {bad}", index=bad)
    tri_tet, tri_local, ends = _backend.kernels.tet_case_triangles(
        tets, sdf, CASE_TABLE, CASE_COUNTS, TET_EDGES)
    n = len(sdf)
    keys = ends[:, :, 0] * n + ends[:, :, 1]
    uniq, first, inverse = np.unique(keys.ravel(), return_index=True, return_inverse=True)
    edges = np.stack([uniq // n, uniq % n], axis=1)
    triangles = inverse.reshape(-1, 3)
    vertex_tet = tri_tet[first // 3]
    return _Topology(edges, triangles, tri_tet, tri_local, vertex_tet)


def _interpolate(positions, sdf, edges):
    sa = sdf[edges[:, 0]]
    sb = sdf[edges[:, 1]]
    t = sa / (sa - sb)
    va = positions[edges[:, 0]]
    vb = positions[edges[:, 1]]
    return va + t[:, None] * (vb - va), t


def marching_tetrahedra(grid, positions=None):
    """Extract the zero level set of ``grid`` as a mesh with provenance.

    Surface vertices are ordered by their grid edge key ``(a, b)``;
    triangles by ``(tet index, local triangle index)``.
    """
    positions = grid.vertices if positions is None else np.asarray(positions, dtype=np.float64)
    topo = surface_topology(grid.tets, grid.sdf)
    points, t = _interpolate(positions, grid.sdf, topo.edges)
    return SurfaceMesh(points, topo.triangles, Provenance(topo.edges, t, topo.vertex_tet))


def backward_surface(mesh, vertex_grads, grid, positions=None):
    """Pull per-surface-vertex cotangents back to grid sdf values and offsets.

    Case selection is piecewise constant and contributes nothing.  Offsets
    saturated by the clamp receive zero gradient.
    """
    if mesh.provenance is None:
        raise ContractViolation("mesh has no provenance; it was not extracted from a grid")
    positions = grid.vertices if positions is None else positions
    grad_sdf, grad_pos = _edge_adjoint(
        positions, grid.sdf, mesh.provenance.edges, np.asarray(vertex_grads, dtype=np.float64))
    grad_offsets = np.where(grid.clamped, 0.0, grad_pos)
    return grad_sdf, grad_offsets


def _edge_adjoint(positions, sdf, edges, g):
    a, b = edges[:, 0], edges[:, 1]
    sa, sb = sdf[a], sdf[b]
    diff = sa - sb
    t = sa / diff
    delta = positions[b] - positions[a]
    gd = np.einsum("ij,ij->i", g, delta)
    n = len(sdf)
    idx = np.concatenate([a, b])
    grad_sdf = np.bincount(idx, np.concatenate([gd * (-sb / diff ** 2), gd * (sa / diff ** 2)]),
                           minlength=n)
    wa = (1.0 - t)[:, None] * g
    wb = t[:, None] * g
    grad_pos = np.empty((n, 3))
    for d in range(3):
        grad_pos[:, d] = np.bincount(idx, np.concatenate([wa[:, d], wb[:, d]]), minlength=n)
    return grad_sdf, grad_pos


def surface_points(positions, sdf, edges):
    """Differentiable surface vertices from grid position and sdf nodes.

    ``positions`` is an ``(N, 3)`` node, ``sdf`` an ``(N,)`` node or array,
    ``edges`` the crossing edges of a fixed sign pattern.
    """
    tape = positions.tape
    sdf_node = tape.lift(sdf)
    pv = positions.value
    sv = sdf_node.value
    points, _ = _interpolate(pv, sv, edges)

    def vjp(g):
        grad_sdf, grad_pos = _edge_adjoint(pv, sv, edges, g)
        return grad_pos, grad_sdf

    return ops.custom(tape, points, (positions, sdf_node), vjp)


def advect(grid_positions, provenance):
    """Surface vertices moved with their generating grid vertices (``t`` held fixed)."""
    w = np.stack([1.0 - provenance.t, provenance.t], axis=1)
    if hasattr(grid_positions, "tape"):
        return ops.combine(grid_positions, provenance.edges, w)
    p = np.asarray(grid_positions)
    return w[:, :1] * p[provenance.edges[:, 0]] + w[:, 1:] * p[provenance.edges[:, 1]]
