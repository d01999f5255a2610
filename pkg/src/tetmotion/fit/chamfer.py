"""Symmetric chamfer distance between point sets."""

import numpy as np

from tetmotion.diff import ops
from tetmotion.errors import InvalidArgument
from tetmotion.geometry import NearestNeighborIndex


def _points(x, name):
    p = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise InvalidArgument(f"chamfer: {name} is empty")
    return p


def _one_way(src, index, squared):
    _, d2 = index.query(src)
    return np.mean(d2) if squared else np.mean(np.sqrt(d2))


def chamfer(sample_a, sample_b, squared=True, index_b=None, index_a=None):
    """Mean nearest-neighbour distance from a to b plus from b to a.

    Distances are squared by default.  Prebuilt indices may be passed to
    avoid rebuilding them for a fixed point set.
    """
    a = _points(sample_a, "sample_a")
    b = _points(sample_b, "sample_b")
    index_b = index_b or NearestNeighborIndex(b)
    index_a = index_a or NearestNeighborIndex(a)
    return float(_one_way(a, index_b, squared) + _one_way(b, index_a, squared))


def chamfer_node(points, target, squared=True, target_index=None):
    """Chamfer between a point node and a constant target set.

    Nearest-neighbour assignments are frozen at evaluation time; gradients
    flow only through the distances to the selected points.
    """
    pv = _points(points.value, "points")
    tv = _points(target, "target")
    target_index = target_index or NearestNeighborIndex(tv)
    nn_ab, d2_ab = target_index.query(pv)
    nn_ba, d2_ba = NearestNeighborIndex(pv).query(tv)
    na, nb = len(pv), len(tv)
    diff_ab = pv - tv[nn_ab]
    diff_ba = pv[nn_ba] - tv
    if squared:
        value = np.mean(d2_ab) + np.mean(d2_ba)
        w_ab = np.full(na, 2.0 / na)
        w_ba = np.full(nb, 2.0 / nb)
    else:
        da, db = np.sqrt(d2_ab), np.sqrt(d2_ba)
        value = np.mean(da) + np.mean(db)
        w_ab = np.where(da > 0, 1.0 / (na * np.where(da > 0, da, 1.0)), 0.0)
        w_ba = np.where(db > 0, 1.0 / (nb * np.where(db > 0, db, 1.0)), 0.0)

    def vjp(g):
        g = float(g)
        grad = w_ab[:, None] * diff_ab
        scatter = w_ba[:, None] * diff_ba
        for d in range(3):
            grad[:, d] += np.bincount(nn_ba, scatter[:, d], minlength=na)
        return (g * grad,)

    return ops.custom(points.tape, value, (points,), vjp)
