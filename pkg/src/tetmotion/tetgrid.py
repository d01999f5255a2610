"""Deformable tetrahedral grid over the domain cube [-1, 1]^3.

Each cube cell is split into six tetrahedra around its main diagonal
(Kuhn/Freudenthal subdivision), which makes neighbouring cells conform
face to face.  Every vertex carries a clamped offset and a signed distance
value; negative values are inside the shape.
"""

from dataclasses import dataclass, field, replace
from itertools import permutations

import numpy as np

from tetmotion.errors import InvalidArgument, NumericError

DOMAIN_MIN = -1.0
DOMAIN_MAX = 1.0
OFFSET_BETA = 0.5  # max |offset| per axis, in cell edges
# local vertex pairs of the six tet edges; edge id = row
TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class TetGrid:
    resolution: int
    rest_positions: np.ndarray  # (N, 3)
    offsets: np.ndarray  # (N, 3), already clamped
    sdf: np.ndarray  # (N,)
    tets: np.ndarray  # (M, 4) int64, positively oriented at rest
    # True where the last apply_offsets call saturated the clamp
    clamped: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.clamped is None:
            object.__setattr__(self, "clamped", np.zeros(self.offsets.shape, dtype=bool))

    @property
    def vertices(self):
        return self.rest_positions + self.offsets

    @property
    def cell_edge(self):
        return (DOMAIN_MAX - DOMAIN_MIN) / self.resolution

    @property
    def offset_bound(self):
        return OFFSET_BETA * self.cell_edge

    @property
    def num_vertices(self):
        return len(self.rest_positions)

    @property
    def num_tets(self):
        return len(self.tets)


def _kuhn_cell_tets():
    """Six tets of the unit cube as corner codes (bit 0 = x, 1 = y, 2 = z)."""
    out = []
    for perm in permutations(range(3)):
        code = 0
        path = [code]
        for axis in perm:
            code |= 1 << axis
            path.append(code)
        out.append(path)
    return np.array(out, dtype=np.int64)


def signed_volumes(positions, tets):
    """Signed volume of every tet, positive for positive orientation."""
    p = np.asarray(positions)
    t = np.asarray(tets)
    a = p[t[:, 1]] - p[t[:, 0]]
    b = p[t[:, 2]] - p[t[:, 0]]
    c = p[t[:, 3]] - p[t[:, 0]]
    return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0


def build_uniform_grid(resolution):
    """Regular grid with zero offsets and sdf = +1 everywhere."""
    if isinstance(resolution, bool) or int(resolution) != resolution or resolution < 1:
        raise InvalidArgument(f"resolution must be a positive integer, got {resolution!r}")
    R = int(resolution)
    n = R + 1
    lin = np.linspace(DOMAIN_MIN, DOMAIN_MAX, n)
    # vertex id = i + n*j + n*n*k for lattice coordinate (i, j, k)
    zz, yy, xx = np.meshgrid(lin, lin, lin, indexing="ij")
    rest = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)

    i, j, k = np.meshgrid(np.arange(R), np.arange(R), np.arange(R), indexing="ij")
    base = (i + n * j + n * n * k).ravel()
    corner_offset = np.array(
        [(c & 1) + n * ((c >> 1) & 1) + n * n * ((c >> 2) & 1) for c in range(8)],
        dtype=np.int64,
    )
    local = corner_offset[_kuhn_cell_tets()]  # (6, 4)
    # orient the six reference tets once; orientation is translation invariant
    unit = np.array([[(c >> a) & 1 for a in range(3)] for c in range(8)], dtype=np.float64)
    ref = _kuhn_cell_tets()
    vol = signed_volumes(unit, ref)
    local = local.copy()
    flip = vol < 0
    local[flip, 2], local[flip, 3] = local[flip, 3].copy(), local[flip, 2].copy()
    tets = (base[:, None, None] + local[None]).reshape(-1, 4).astype(np.int64)

    return TetGrid(
        resolution=R,
        rest_positions=rest,
        offsets=np.zeros_like(rest),
        sdf=np.ones(len(rest)),
        tets=tets,
    )


def clamp_offsets(offsets, bound):
    """Component-wise saturation; returns the clamped values and the active mask."""
    offsets = np.asarray(offsets, dtype=np.float64)
    clamped = np.clip(offsets, -bound, bound)
    return clamped, np.abs(offsets) > bound


def apply_offsets(grid, offsets):
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape != grid.rest_positions.shape:
        raise InvalidArgument(
            f"offsets shape {offsets.shape} does not match vertices {grid.rest_positions.shape}"
        )
    if not np.isfinite(offsets).all():
        bad = int(np.argwhere(~np.isfinite(offsets))[0, 0])
        raise NumericError(f"non-finite offset at vertex {bad}", index=bad)
    clamped, mask = clamp_offsets(offsets, grid.offset_bound)
    return replace(grid, offsets=clamped, clamped=mask)


def with_sdf(grid, sdf):
    sdf = np.asarray(sdf, dtype=np.float64)
    if sdf.shape != (grid.num_vertices,):
        raise InvalidArgument(f"sdf shape {sdf.shape} does not match {grid.num_vertices} vertices")
    if not np.isfinite(sdf).all():
        bad = int(np.flatnonzero(~np.isfinite(sdf))[0])
        raise NumericError(f"non-finite sdf at vertex {bad}", index=bad)
    return replace(grid, sdf=sdf.copy())


def set_sdf_from_field(grid, field):
    """Evaluate ``field`` at the deformed vertices.

    ``field`` takes an ``(N, 3)`` array and returns ``N`` values.
    """
    values = np.asarray(field(grid.vertices), dtype=np.float64).reshape(-1)
    if values.shape != (grid.num_vertices,):
        raise InvalidArgument(f"field returned {values.shape}, expected ({grid.num_vertices},)")
    return with_sdf(grid, values)


def inverted_tet_count(grid):
    """Number of tets with non-positive volume at the deformed positions."""
    return int((signed_volumes(grid.vertices, grid.tets) <= 0).sum())


def grid_edges(tets):
    """Unique undirected edges of the tet mesh as sorted ``(a, b)`` pairs."""
    pairs = np.asarray(tets)[:, TET_EDGES].reshape(-1, 2)
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


def boundary_face_count(tets):
    """Faces used by exactly one tet; helper for conformity diagnostics."""
    faces = np.sort(np.asarray(tets)[:, [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]], axis=2)
    _, counts = np.unique(faces.reshape(-1, 3), axis=0, return_counts=True)
    return int((counts == 1).sum()), counts


# analytic fields used for initialisation and tests

def sphere_field(radius, center=(0.0, 0.0, 0.0)):
    c = np.asarray(center, dtype=np.float64)
    return lambda p: np.linalg.norm(np.asarray(p) - c, axis=-1) - radius


def box_field(half_extent):
    h = np.broadcast_to(np.asarray(half_extent, dtype=np.float64), (3,))

    def field(p):
        q = np.abs(np.asarray(p)) - h
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    return field


def ellipsoid_field(radii):
    """Approximate SDF of an axis-aligned ellipsoid (exact zero set)."""
    r = np.asarray(radii, dtype=np.float64)

    def field(p):
        p = np.asarray(p)
        k0 = np.linalg.norm(p / r, axis=-1)
        k1 = np.linalg.norm(p / (r * r), axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = k0 * (k0 - 1.0) / k1
        return np.where(k1 > 0, out, -r.min())

    return field
