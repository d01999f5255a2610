"""Indexed triangle meshes and their topology checks."""

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from tetmotion.errors import InvalidArgument


@dataclass(frozen=True, eq=False)
class Provenance:
    """Links each surface vertex to the grid edge it was interpolated on.

    ``edges[k] = (a, b)`` with ``a < b`` and the vertex sits at
    ``(1 - t[k]) * v[a] + t[k] * v[b]``.
    """

    edges: np.ndarray  # (K, 2) int64
    t: np.ndarray  # (K,)
    tet: np.ndarray  # (K,) first tet that produced the vertex


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    positions: np.ndarray
    triangles: np.ndarray
    provenance: Provenance = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        tri = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(tri) and (tri.min() < 0 or tri.max() >= len(pos)):
            raise InvalidArgument("triangle index out of range")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "triangles", tri)

    @property
    def num_vertices(self):
        return len(self.positions)

    @property
    def num_triangles(self):
        return len(self.triangles)

    @property
    def is_empty(self):
        return len(self.triangles) == 0

    def with_positions(self, positions):
        return replace(self, positions=np.asarray(positions, dtype=np.float64))

    def flipped(self):
        return replace(self, triangles=self.triangles[:, ::-1].copy())

    @cached_property
    def edge_degrees(self):
        """Unique undirected edges and how many triangles use each."""
        if self.is_empty:
            return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
        e = self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0, return_counts=True)

    @cached_property
    def is_closed(self):
        """Every edge shared by exactly two triangles (empty counts as closed)."""
        _, counts = self.edge_degrees
        return bool(np.all(counts == 2))

    @cached_property
    def has_repeated_indices(self):
        t = self.triangles
        return bool(np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])))

    def euler_characteristic(self):
        used = np.unique(self.triangles)
        edges, _ = self.edge_degrees
        return len(used) - len(edges) + len(self.triangles)

    def triangle_corners(self, positions=None):
        p = self.positions if positions is None else positions
        return p[self.triangles[:, 0]], p[self.triangles[:, 1]], p[self.triangles[:, 2]]

    def face_normals(self, normalized=True):
        a, b, c = self.triangle_corners()
        n = np.cross(b - a, c - a)
        if normalized:
            length = np.linalg.norm(n, axis=1, keepdims=True)
            n = n / np.where(length > 0, length, 1.0)
        return n

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_normals(normalized=False), axis=1)
