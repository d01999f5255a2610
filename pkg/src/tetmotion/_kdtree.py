"""Static KD-tree layout shared by the compiled nearest-neighbour query.

The tree is built once in numpy and stored as flat arrays so the compiled
query loop never touches Python objects.
"""

from dataclasses import dataclass

import numpy as np

LEAF_SIZE = 16


@dataclass(frozen=True)
class KDTree:
    points: np.ndarray  # (n, 3) float64, reordered so each leaf is contiguous
    perm: np.ndarray  # (n,) int64, original index of points[k]
    start: np.ndarray  # (nodes,) int64
    stop: np.ndarray  # (nodes,) int64
    split_dim: np.ndarray  # (nodes,) int64, -1 for leaves
    split_val: np.ndarray  # (nodes,) float64
    left: np.ndarray  # (nodes,) int64
    right: np.ndarray  # (nodes,) int64


def build_kdtree(points, leaf_size=LEAF_SIZE):
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = len(points)
    perm = np.arange(n, dtype=np.int64)
    start, stop, split_dim, split_val, left, right = [], [], [], [], [], []

    def new_node(lo, hi):
        start.append(lo)
        stop.append(hi)
        split_dim.append(-1)
        split_val.append(0.0)
        left.append(-1)
        right.append(-1)
        return len(start) - 1

    root = new_node(0, n)
    stack = [root]
    while stack:
        node = stack.pop()
        lo, hi = start[node], stop[node]
        if hi - lo <= leaf_size:
            continue
        block = points[perm[lo:hi]]
        spread = block.max(axis=0) - block.min(axis=0)
        dim = int(np.argmax(spread))
        if spread[dim] == 0.0:
            continue  # all points coincide; keep as an oversized leaf
        mid = (hi - lo) // 2
        # stable ordering keeps the tree a pure function of the input
        order = np.argsort(block[:, dim], kind="stable")
        perm[lo:hi] = perm[lo:hi][order]
        split_dim[node] = dim
        split_val[node] = float(points[perm[lo + mid], dim])
        left[node] = new_node(lo, lo + mid)
        right[node] = new_node(lo + mid, hi)
        stack.append(left[node])
        stack.append(right[node])

    as_i = lambda v: np.asarray(v, dtype=np.int64)  # noqa: E731
    return KDTree(
        points=np.ascontiguousarray(points[perm]),
        perm=perm,
        start=as_i(start),
        stop=as_i(stop),
        split_dim=as_i(split_dim),
        split_val=np.asarray(split_val, dtype=np.float64),
        left=as_i(left),
        right=as_i(right),
    )
