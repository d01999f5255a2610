"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each row is the best of ``--repeat`` runs; the last column is the speedup of
the compiled backend.  Outputs are also compared so a fast but wrong kernel
shows up here.
"""

import argparse
import json
import time

import numpy as np

from tetmotion import _backend
from tetmotion.geometry import icosphere
from tetmotion.march import CASE_COUNTS, CASE_TABLE
from tetmotion.tetgrid import TET_EDGES, build_uniform_grid, set_sdf_from_field, sphere_field


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=0, atol=1e-12)


def cases():
    rng = np.random.default_rng(0)
    cloud = rng.uniform(-1, 1, (20_000, 3))
    queries = rng.uniform(-1, 1, (20_000, 3))
    mesh = icosphere(0.5, 3)
    grid_q = build_uniform_grid(16).vertices
    grid = set_sdf_from_field(build_uniform_grid(32), sphere_field(0.5))

    def nearest(k):
        tree = k.nearest_build(cloud)
        return k.nearest_query(tree, queries)

    return {
        "nearest 20k x 20k": nearest,
        "closest point, R=16 grid vs 1280 faces":
            lambda k: k.closest_on_triangles(mesh.positions, mesh.triangles, grid_q),
        "winding number, R=16 grid vs 1280 faces":
            lambda k: k.winding_numbers(mesh.positions, mesh.triangles, grid_q),
        "tet cases, R=32 sphere":
            lambda k: k.tet_case_triangles(grid.tets, grid.sdf, CASE_TABLE, CASE_COUNTS, TET_EDGES),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="also write results to this file")
    args = parser.parse_args(argv)
    if _backend.compiled is None:
        parser.error("compiled extension is not built; run `pip install -e . --no-build-isolation`")
    rows = []
    print(f"{'kernel':<44}{'numpy s':>10}{'cython s':>10}{'speedup':>9}  agree")
    for name, fn in cases().items():
        t_py, out_py = _best(lambda: fn(_backend.fallback), args.repeat)
        t_c, out_c = _best(lambda: fn(_backend.compiled), args.repeat)
        agree = _same(out_py, out_c)
        rows.append({"kernel": name, "numpy_s": t_py, "cython_s": t_c, "speedup": t_py / t_c,
                     "agree": bool(agree)})
        print(f"{name:<44}{t_py:>10.4f}{t_c:>10.4f}{t_py / t_c:>8.1f}x  {'yes' if agree else 'NO'}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    raise SystemExit(main())
