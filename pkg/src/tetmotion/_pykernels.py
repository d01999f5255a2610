"""Pure numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and the same arithmetic order, so nearest-neighbour indices and
closest points agree bit for bit between backends.  Winding numbers agree to
rounding only (the compiled loop sums sequentially).
"""

import numpy as np

NAME = "numpy"
_BLOCK = 256


def nearest_build(points):
    return np.ascontiguousarray(points, dtype=np.float64)


def nearest_query(index, queries):
    """Exact nearest neighbour by blocked brute force; ties go to the lowest index."""
    pts = index
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    n = len(queries)
    idx = np.empty(n, dtype=np.int64)
    d2 = np.empty(n, dtype=np.float64)
    px, py, pz = pts[:, 0], pts[:, 1], pts[:, 2]
    block = max(1, min(_BLOCK, 4_000_000 // max(len(pts), 1)))
    for lo in range(0, n, block):
        q = queries[lo:lo + block]
        dx = q[:, 0:1] - px
        dy = q[:, 1:2] - py
        dz = q[:, 2:3] - pz
        dist = dx * dx + dy * dy + dz * dz
        best = np.argmin(dist, axis=1)
        idx[lo:lo + block] = best
        d2[lo:lo + block] = dist[np.arange(len(q)), best]
    return idx, d2


def _segment_closest(p, a, b):
    ab = b - a
    denom = _dot(ab, ab)
    t = np.where(denom > 0, _dot(p - a, ab) / np.where(denom > 0, denom, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return a + t[..., None] * ab


def _dot(u, v):
    return u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1] + u[..., 2] * v[..., 2]


def _closest_block(p, a, b, c):
    """Closest point on each triangle (Ericson's region walk), broadcast over p."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    bp = p - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    cp = p - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    shape = np.broadcast_shapes(p.shape, a.shape)
    out = np.empty(shape, dtype=np.float64)
    done = np.zeros(shape[:-1], dtype=bool)

    def assign(mask, value):
        m = mask & ~done
        if m.any():
            out[m] = np.broadcast_to(value, shape)[m]
            done[m] = True

    assign((d1 <= 0) & (d2 <= 0), a)
    assign((d3 >= 0) & (d4 <= d3), b)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0) & (d1 - d3 > 0), a + v[..., None] * ab)
        assign((d6 >= 0) & (d5 <= d6), c)
        w = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0) & (d2 - d6 > 0), a + w[..., None] * ac)
        e43 = d4 - d3
        e56 = d5 - d6
        w = e43 / (e43 + e56)
        assign((va <= 0) & (e43 >= 0) & (e56 >= 0) & (e43 + e56 > 0), b + w[..., None] * (c - b))
        total = va + vb + vc
        interior = total > 0
        inv = 1.0 / np.where(interior, total, 1.0)
        v = vb * inv
        w = vc * inv
        assign(interior, a + ab * v[..., None] + ac * w[..., None])
    rest = ~done
    if rest.any():
        # degenerate triangle: best of its three edges
        pa = np.broadcast_to(p, shape)[rest]
        aa = np.broadcast_to(a, shape)[rest]
        bb = np.broadcast_to(b, shape)[rest]
        cc = np.broadcast_to(c, shape)[rest]
        cands = [_segment_closest(pa, aa, bb), _segment_closest(pa, bb, cc),
                 _segment_closest(pa, cc, aa)]
        dists = np.stack([_dot(pa - q, pa - q) for q in cands])
        pick = np.argmin(dists, axis=0)
        out[rest] = np.stack(cands)[pick, np.arange(len(pick))]
    return out


def closest_on_triangles(vertices, faces, queries):
    """Squared distance, closest point and face index of the nearest triangle."""
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    a = vertices[faces[:, 0]][None]
    b = vertices[faces[:, 1]][None]
    c = vertices[faces[:, 2]][None]
    n = len(queries)
    d2 = np.empty(n)
    closest = np.empty((n, 3))
    face = np.empty(n, dtype=np.int64)
    block = max(1, min(_BLOCK, 400_000 // max(len(faces), 1)))
    for lo in range(0, n, block):
        p = queries[lo:lo + block, None, :]
        cp = _closest_block(p, a, b, c)
        diff = p - cp
        dist = _dot(diff, diff)
        best = np.argmin(dist, axis=1)
        rows = np.arange(len(best))
        d2[lo:lo + block] = dist[rows, best]
        closest[lo:lo + block] = cp[rows, best]
        face[lo:lo + block] = best
    return d2, closest, face


def winding_numbers(vertices, faces, queries):
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    A = vertices[faces[:, 0]][None]
    B = vertices[faces[:, 1]][None]
    C = vertices[faces[:, 2]][None]
    out = np.empty(len(queries))
    block = max(1, min(_BLOCK, 400_000 // max(len(faces), 1)))
    for lo in range(0, len(queries), block):
        p = queries[lo:lo + block, None, :]
        a = A - p
        b = B - p
        c = C - p
        la = np.sqrt(_dot(a, a))
        lb = np.sqrt(_dot(b, b))
        lc = np.sqrt(_dot(c, c))
        bxc = np.stack([
            b[..., 1] * c[..., 2] - b[..., 2] * c[..., 1],
            b[..., 2] * c[..., 0] - b[..., 0] * c[..., 2],
            b[..., 0] * c[..., 1] - b[..., 1] * c[..., 0],
        ], axis=-1)
        det = _dot(a, bxc)
        den = la * lb * lc + _dot(a, b) * lc + _dot(a, c) * lb + _dot(b, c) * la
        out[lo:lo + block] = (2.0 * np.arctan2(det, den)).sum(axis=1)
    return out / (4.0 * np.pi)


def tet_case_triangles(tets, sdf, table, counts, edges):
    """Emit the crossing-edge endpoints of every surface triangle.

    Returns ``(tri_tet, tri_local, ends)`` where ``ends`` is ``(F, 3, 2)``
    with each edge stored as ``(low, high)`` global vertex indices, ordered
    by ``(tet index, local triangle index)``.
    """
    tets = np.ascontiguousarray(tets, dtype=np.int64)
    inside = np.asarray(sdf)[tets] < 0
    case = (inside * (1 << np.arange(4))).sum(axis=1)
    ntri = counts[case]
    tet_ids = np.repeat(np.arange(len(tets), dtype=np.int64), ntri)
    # local triangle index 0 or 1 within each tet
    first = np.cumsum(ntri) - ntri
    local = np.arange(len(tet_ids), dtype=np.int64) - np.repeat(first, ntri)
    local_edges = table[case[tet_ids], local]  # (F, 3)
    ends_local = edges[local_edges]  # (F, 3, 2)
    t = tets[tet_ids]
    ga = np.take_along_axis(t, ends_local[:, :, 0], axis=1)
    gb = np.take_along_axis(t, ends_local[:, :, 1], axis=1)
    ends = np.stack([np.minimum(ga, gb), np.maximum(ga, gb)], axis=-1)
    return tet_ids, local, ends
