# distutils: language = c++
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, atan2, M_PI

from tetmotion._kdtree import build_kdtree

cnp.import_array()

NAME = "cython"


def nearest_build(points):
    return build_kdtree(points)


def nearest_query(tree, queries):
    cdef const double[:, ::1] pts = tree.points
    cdef const long long[::1] perm = tree.perm.astype(np.int64)
    cdef const long long[::1] start = tree.start
    cdef const long long[::1] stop = tree.stop
    cdef const long long[::1] sdim = tree.split_dim
    cdef const double[::1] sval = tree.split_val
    cdef const long long[::1] left = tree.left
    cdef const long long[::1] right = tree.right
    cdef const double[:, ::1] q = np.ascontiguousarray(queries, dtype=np.float64)
    cdef Py_ssize_t n = q.shape[0]
    idx_arr = np.empty(n, dtype=np.int64)
    d2_arr = np.empty(n, dtype=np.float64)
    cdef long long[::1] out_idx = idx_arr
    cdef double[::1] out_d2 = d2_arr
    cdef long long[::1] stack_node = np.empty(256, dtype=np.int64)
    cdef double[::1] stack_bound = np.empty(256, dtype=np.float64)
    cdef Py_ssize_t i, k, top
    cdef long long node, near, far, best_idx, orig
    cdef double qx, qy, qz, dx, dy, dz, d, best, diff, bound
    if pts.shape[0] == 0:
        idx_arr[:] = -1
        d2_arr[:] = np.inf
        return idx_arr, d2_arr
    with nogil:
        for i in range(n):
            qx = q[i, 0]
            qy = q[i, 1]
            qz = q[i, 2]
            best = 1e308
            best_idx = -1
            top = 0
            stack_node[0] = 0
            stack_bound[0] = 0.0
            top = 1
            while top > 0:
                top -= 1
                node = stack_node[top]
                bound = stack_bound[top]
                if bound > best:
                    continue
                if sdim[node] < 0:
                    for k in range(start[node], stop[node]):
                        dx = qx - pts[k, 0]
                        dy = qy - pts[k, 1]
                        dz = qz - pts[k, 2]
                        d = dx * dx + dy * dy + dz * dz
                        orig = perm[k]
                        if d < best or (d == best and orig < best_idx):
                            best = d
                            best_idx = orig
                    continue
                if sdim[node] == 0:
                    diff = qx - sval[node]
                elif sdim[node] == 1:
                    diff = qy - sval[node]
                else:
                    diff = qz - sval[node]
                if diff < 0:
                    near = left[node]
                    far = right[node]
                else:
                    near = right[node]
                    far = left[node]
                # far first so the near child is popped next
                stack_node[top] = far
                stack_bound[top] = diff * diff
                top += 1
                stack_node[top] = near
                stack_bound[top] = 0.0
                top += 1
            out_idx[i] = best_idx
            out_d2[i] = best
    return idx_arr, d2_arr


cdef inline double _dot3(double ax, double ay, double az,
                         double bx, double by, double bz) noexcept nogil:
    return ax * bx + ay * by + az * bz


cdef inline void _seg_closest(double px, double py, double pz,
                              double ax, double ay, double az,
                              double bx, double by, double bz,
                              double* out) noexcept nogil:
    cdef double ex = bx - ax, ey = by - ay, ez = bz - az
    cdef double den = _dot3(ex, ey, ez, ex, ey, ez)
    cdef double t = 0.0
    if den > 0:
        t = _dot3(px - ax, py - ay, pz - az, ex, ey, ez) / den
    if t < 0.0:
        t = 0.0
    if t > 1.0:
        t = 1.0
    out[0] = ax + t * ex
    out[1] = ay + t * ey
    out[2] = az + t * ez


cdef void _closest_tri(double px, double py, double pz,
                       double ax, double ay, double az,
                       double bx, double by, double bz,
                       double cx, double cy, double cz,
                       double* out) noexcept nogil:
    cdef double abx = bx - ax, aby = by - ay, abz = bz - az
    cdef double acx = cx - ax, acy = cy - ay, acz = cz - az
    cdef double d1 = _dot3(abx, aby, abz, px - ax, py - ay, pz - az)
    cdef double d2 = _dot3(acx, acy, acz, px - ax, py - ay, pz - az)
    cdef double d3 = _dot3(abx, aby, abz, px - bx, py - by, pz - bz)
    cdef double d4 = _dot3(acx, acy, acz, px - bx, py - by, pz - bz)
    cdef double d5 = _dot3(abx, aby, abz, px - cx, py - cy, pz - cz)
    cdef double d6 = _dot3(acx, acy, acz, px - cx, py - cy, pz - cz)
    cdef double vc = d1 * d4 - d3 * d2
    cdef double vb = d5 * d2 - d1 * d6
    cdef double va = d3 * d6 - d5 * d4
    cdef double v, w, e43, e56, total, inv, best, dd
    cdef double cand[9]
    cdef int j
    if d1 <= 0 and d2 <= 0:
        out[0] = ax; out[1] = ay; out[2] = az
        return
    if d3 >= 0 and d4 <= d3:
        out[0] = bx; out[1] = by; out[2] = bz
        return
    if vc <= 0 and d1 >= 0 and d3 <= 0 and d1 - d3 > 0:
        v = d1 / (d1 - d3)
        out[0] = ax + v * abx; out[1] = ay + v * aby; out[2] = az + v * abz
        return
    if d6 >= 0 and d5 <= d6:
        out[0] = cx; out[1] = cy; out[2] = cz
        return
    if vb <= 0 and d2 >= 0 and d6 <= 0 and d2 - d6 > 0:
        w = d2 / (d2 - d6)
        out[0] = ax + w * acx; out[1] = ay + w * acy; out[2] = az + w * acz
        return
    e43 = d4 - d3
    e56 = d5 - d6
    if va <= 0 and e43 >= 0 and e56 >= 0 and e43 + e56 > 0:
        w = e43 / (e43 + e56)
        out[0] = bx + w * (cx - bx)
        out[1] = by + w * (cy - by)
        out[2] = bz + w * (cz - bz)
        return
    total = va + vb + vc
    if total > 0:
        inv = 1.0 / total
        v = vb * inv
        w = vc * inv
        out[0] = ax + abx * v + acx * w
        out[1] = ay + aby * v + acy * w
        out[2] = az + abz * v + acz * w
        return
    _seg_closest(px, py, pz, ax, ay, az, bx, by, bz, &cand[0])
    _seg_closest(px, py, pz, bx, by, bz, cx, cy, cz, &cand[3])
    _seg_closest(px, py, pz, cx, cy, cz, ax, ay, az, &cand[6])
    best = 1e308
    for j in range(3):
        dd = _dot3(px - cand[3 * j], py - cand[3 * j + 1], pz - cand[3 * j + 2],
                   px - cand[3 * j], py - cand[3 * j + 1], pz - cand[3 * j + 2])
        if dd < best:
            best = dd
            out[0] = cand[3 * j]; out[1] = cand[3 * j + 1]; out[2] = cand[3 * j + 2]


def closest_on_triangles(vertices, faces, queries):
    cdef const double[:, ::1] V = np.ascontiguousarray(vertices, dtype=np.float64)
    cdef const long long[:, ::1] F = np.ascontiguousarray(faces, dtype=np.int64)
    cdef const double[:, ::1] Q = np.ascontiguousarray(queries, dtype=np.float64)
    cdef Py_ssize_t n = Q.shape[0], m = F.shape[0], i, f
    d2_arr = np.empty(n)
    cl_arr = np.empty((n, 3))
    face_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] d2 = d2_arr
    cdef double[:, ::1] cl = cl_arr
    cdef long long[::1] face = face_arr
    cdef double p[3]
    cdef double c[3]
    cdef double best, dx, dy, dz, d
    cdef long long a, b, cc, best_f
    with nogil:
        for i in range(n):
            best = 1e308
            best_f = -1
            for f in range(m):
                a = F[f, 0]; b = F[f, 1]; cc = F[f, 2]
                _closest_tri(Q[i, 0], Q[i, 1], Q[i, 2],
                             V[a, 0], V[a, 1], V[a, 2],
                             V[b, 0], V[b, 1], V[b, 2],
                             V[cc, 0], V[cc, 1], V[cc, 2], &c[0])
                dx = Q[i, 0] - c[0]
                dy = Q[i, 1] - c[1]
                dz = Q[i, 2] - c[2]
                d = dx * dx + dy * dy + dz * dz
                if d < best:
                    best = d
                    best_f = f
                    p[0] = c[0]; p[1] = c[1]; p[2] = c[2]
            d2[i] = best
            face[i] = best_f
            cl[i, 0] = p[0]; cl[i, 1] = p[1]; cl[i, 2] = p[2]
    return d2_arr, cl_arr, face_arr


def winding_numbers(vertices, faces, queries):
    cdef const double[:, ::1] V = np.ascontiguousarray(vertices, dtype=np.float64)
    cdef const long long[:, ::1] F = np.ascontiguousarray(faces, dtype=np.int64)
    cdef const double[:, ::1] Q = np.ascontiguousarray(queries, dtype=np.float64)
    cdef Py_ssize_t n = Q.shape[0], m = F.shape[0], i, f
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double ax, ay, az, bx, by, bz, cx, cy, cz, la, lb, lc, det, den, acc
    cdef long long ia, ib, ic
    with nogil:
        for i in range(n):
            acc = 0.0
            for f in range(m):
                ia = F[f, 0]; ib = F[f, 1]; ic = F[f, 2]
                ax = V[ia, 0] - Q[i, 0]; ay = V[ia, 1] - Q[i, 1]; az = V[ia, 2] - Q[i, 2]
                bx = V[ib, 0] - Q[i, 0]; by = V[ib, 1] - Q[i, 1]; bz = V[ib, 2] - Q[i, 2]
                cx = V[ic, 0] - Q[i, 0]; cy = V[ic, 1] - Q[i, 1]; cz = V[ic, 2] - Q[i, 2]
                la = sqrt(ax * ax + ay * ay + az * az)
                lb = sqrt(bx * bx + by * by + bz * bz)
                lc = sqrt(cx * cx + cy * cy + cz * cz)
                det = (ax * (by * cz - bz * cy) + ay * (bz * cx - bx * cz)
                       + az * (bx * cy - by * cx))
                den = (la * lb * lc + (ax * bx + ay * by + az * bz) * lc
                       + (ax * cx + ay * cy + az * cz) * lb
                       + (bx * cx + by * cy + bz * cz) * la)
                acc += 2.0 * atan2(det, den)
            out[i] = acc / (4.0 * M_PI)
    return out_arr


def tet_case_triangles(tets, sdf, table, counts, edges):
    cdef const long long[:, ::1] T = np.ascontiguousarray(tets, dtype=np.int64)
    cdef const double[::1] S = np.ascontiguousarray(sdf, dtype=np.float64)
    cdef const long long[:, :, ::1] tab = np.ascontiguousarray(table, dtype=np.int64)
    cdef const long long[::1] cnt = np.ascontiguousarray(counts, dtype=np.int64)
    cdef const long long[:, ::1] E = np.ascontiguousarray(edges, dtype=np.int64)
    cdef Py_ssize_t m = T.shape[0], i, j, k, total = 0, pos = 0
    cdef int case
    cdef long long ga, gb, e
    for i in range(m):
        case = 0
        for j in range(4):
            if S[T[i, j]] < 0:
                case |= 1 << j
        total += cnt[case]
    tet_arr = np.empty(total, dtype=np.int64)
    loc_arr = np.empty(total, dtype=np.int64)
    ends_arr = np.empty((total, 3, 2), dtype=np.int64)
    cdef long long[::1] tri_tet = tet_arr
    cdef long long[::1] tri_loc = loc_arr
    cdef long long[:, :, ::1] ends = ends_arr
    with nogil:
        for i in range(m):
            case = 0
            for j in range(4):
                if S[T[i, j]] < 0:
                    case |= 1 << j
            for j in range(cnt[case]):
                tri_tet[pos] = i
                tri_loc[pos] = j
                for k in range(3):
                    e = tab[case, j, k]
                    ga = T[i, E[e, 0]]
                    gb = T[i, E[e, 1]]
                    if ga < gb:
                        ends[pos, k, 0] = ga
                        ends[pos, k, 1] = gb
                    else:
                        ends[pos, k, 0] = gb
                        ends[pos, k, 1] = ga
                pos += 1
    return tet_arr, loc_arr, ends_arr
