"""Finite-difference checks of the analytic gradients.

Relative error of one entry is ``|a - f| / max(|a|, |f|, floor)`` where ``a``
is the tape gradient and ``f`` the central difference.  The floor keeps
entries whose true derivative is ~0 from dividing noise by noise.
"""

import time
from dataclasses import dataclass

import numpy as np

from tetmotion.diff import ops
from tetmotion.diff.layers import bind
from tetmotion.diff.tape import Tape
from tetmotion.fit.model import DeformationModel, band_positions, build_band, neighbor_mean_operator
from tetmotion.fit.motion import MotionSetup, _prepare, frame_loss
from tetmotion.fit.shape import LossWeights
from tetmotion.geometry import volume_node
from tetmotion.march import edge_crossing, edge_crossing_partials, surface_points, surface_topology
from tetmotion.observe import AnalyticMotion, SliceSpec, generate_sequence, observe_sequence
from tetmotion.tetgrid import build_uniform_grid, set_sdf_from_field, sphere_field

REL_FLOOR = 1e-7
TOLERANCES = {"edge_crossing": 1e-4, "marching": 1e-4, "networks": 1e-4, "motion": 1e-3}


def relative_error(analytic, numeric, floor=REL_FLOOR):
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    entries: int
    seconds: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def check_edge_crossing(seed=0, trials=50, h=1e-6):
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(trials):
        va, vb = rng.normal(size=3), rng.normal(size=3)
        sa, sb = -rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0)
        if rng.random() < 0.5:
            sa, sb = -sa, -sb
        dsa, dsb, dva, dvb = edge_crossing_partials(va, vb, sa, sb)
        fd_sa = (edge_crossing(va, vb, sa + h, sb)[0] - edge_crossing(va, vb, sa - h, sb)[0]) / (2 * h)
        fd_sb = (edge_crossing(va, vb, sa, sb + h)[0] - edge_crossing(va, vb, sa, sb - h)[0]) / (2 * h)
        e = np.zeros(3)
        e[0] = h
        fd_va = (edge_crossing(va + e, vb, sa, sb)[0] - edge_crossing(va - e, vb, sa, sb)[0])[0] / (2 * h)
        fd_vb = (edge_crossing(va, vb + e, sa, sb)[0] - edge_crossing(va, vb - e, sa, sb)[0])[0] / (2 * h)
        errs += [relative_error(dsa, fd_sa).max(), relative_error(dsb, fd_sb).max(),
                 float(relative_error(dva, fd_va)), float(relative_error(dvb, fd_vb))]
    return float(np.max(errs)), len(errs)


def _sphere_grid(resolution=4, seed=0):
    grid = set_sdf_from_field(build_uniform_grid(resolution), sphere_field(0.5))
    rng = np.random.default_rng(seed)
    # jitter keeps values off exact symmetries and away from zero
    return grid.__class__(grid.resolution, grid.rest_positions, grid.offsets,
                          grid.sdf + rng.uniform(-0.02, 0.02, grid.num_vertices), grid.tets)


def _surface_loss(grid, offsets, sdf, coeffs):
    tape = Tape()
    off = tape.variable(offsets, name="offsets")
    s = tape.variable(sdf, name="sdf")
    pos = ops.add(off, grid.rest_positions)
    topo = surface_topology(grid.tets, sdf)
    p = surface_points(pos, s, topo.edges)
    loss = ops.add(ops.sum(ops.mul(p, coeffs)), volume_node(p, topo.triangles))
    return tape, loss, topo


def check_marching(seed=0, count=20, h=1e-5):
    """Scalar function of the extracted surface vs. perturbed sdf and offsets.

    Perturbations that flip the sign of any grid value are skipped, since the
    surface topology (and hence the function) changes discontinuously there.
    """
    grid = _sphere_grid(4, seed)
    rng = np.random.default_rng(seed + 1)
    topo0 = surface_topology(grid.tets, grid.sdf)
    coeffs = rng.normal(size=(len(topo0.edges), 3))
    tape, loss, _ = _surface_loss(grid, grid.offsets, grid.sdf, coeffs)
    grads = tape.backward(loss)

    def value(offsets, sdf):
        return float(_surface_loss(grid, offsets, sdf, coeffs)[1].value)

    active = np.unique(topo0.edges)
    errs = []
    for i in rng.choice(active, size=min(count, len(active)), replace=False):
        sp, sm = grid.sdf.copy(), grid.sdf.copy()
        sp[i] += h
        sm[i] -= h
        if np.any((sp < 0) != (grid.sdf < 0)) or np.any((sm < 0) != (grid.sdf < 0)):
            continue
        fd = (value(grid.offsets, sp) - value(grid.offsets, sm)) / (2 * h)
        errs.append(float(relative_error(grads["sdf"][i], fd)))
        d = rng.integers(3)
        op, om = grid.offsets.copy(), grid.offsets.copy()
        op[i, d] += h
        om[i, d] -= h
        fd = (value(op, grid.sdf) - value(om, grid.sdf)) / (2 * h)
        errs.append(float(relative_error(grads["offsets"][i, d], fd)))
    return float(np.max(errs)), len(errs)


def _model_loss(model, params, points, graph, frame):
    tape = Tape()
    bound = bind(tape, params)
    n = len(points)
    band = build_band(np.arange(n), graph, points, 0)
    v = band_positions(model, bound, frame, band, points)
    loss = ops.sum(ops.square(v))
    return tape, loss


def _param_fd(loss_of, params, grads, rng, per_param, h):
    errs = []
    for name in sorted(params):
        p = params[name]
        picks = rng.choice(p.size, size=min(per_param, p.size), replace=False)
        for flat in picks:
            idx = np.unravel_index(flat, p.shape)
            plus = dict(params)
            minus = dict(params)
            plus[name] = p.copy()
            minus[name] = p.copy()
            plus[name][idx] += h
            minus[name][idx] -= h
            fd = (loss_of(plus) - loss_of(minus)) / (2 * h)
            errs.append(float(relative_error(grads[name][idx], fd)))
    return errs


def check_networks(seed=0, per_param=6, h=1e-6):
    """Gradient of sum |v^(S)|^2 w.r.t. every weight tensor of gru and mlp models."""
    grid = build_uniform_grid(2)
    graph = neighbor_mean_operator(grid.tets, grid.num_vertices)
    points = grid.vertices * 0.5
    rng = np.random.default_rng(seed)
    errs = []
    for kind in ("gru", "mlp"):
        model = DeformationModel.create(kind, 2, len(points), steps=2, latent_dim=4, hidden=5,
                                        seed=seed)
        # a zero output layer would make most derivatives vanish; randomise it
        model.params["head1.weight"] = rng.normal(0.0, 0.3, model.params["head1.weight"].shape)
        model.params["codes"] = rng.normal(0.0, 0.5, model.params["codes"].shape)
        tape, loss = _model_loss(model, model.params, points, graph, 1)
        grads = tape.backward(loss).named()

        def loss_of(params, model=model):
            return float(_model_loss(model, params, points, graph, 1)[1].value)

        errs += _param_fd(loss_of, model.params, grads, rng, per_param, h)
    return float(np.max(errs)), len(errs)


def check_motion(seed=0, per_param=3, h=1e-6):
    """Slice and volume losses of a small gru motion fit, differentiated end to end."""
    ds = generate_sequence("icosphere", AnalyticMotion("radial-pulse", 0.1, 4), 3,
                           subdivisions=2)
    grid = set_sdf_from_field(build_uniform_grid(4), sphere_field(0.45))
    model = DeformationModel.create("gru", 3, grid.num_vertices, steps=2, latent_dim=4, hidden=6,
                                    seed=seed)
    rng = np.random.default_rng(seed)
    model.params["head1.weight"] = rng.normal(0.0, 0.05, model.params["head1.weight"].shape)
    setup = MotionSetup.build(grid, model.steps, model.kind)
    weights = LossWeights()
    errs = []
    for mode in (SliceSpec(3), "volume"):
        obs = observe_sequence(ds, mode)
        target = _prepare(obs[2], 100, seed, 2)

        def loss_of(params, target=target):
            return frame_loss(model, params, setup, target, 2, weights, 100, seed)[0]

        _, grads, _ = frame_loss(model, model.params, setup, target, 2, weights, 100, seed)
        errs += _param_fd(loss_of, model.params, grads, rng, per_param, h)
    return float(np.max(errs)), len(errs)


CHECKS = {
    "edge_crossing": check_edge_crossing,
    "marching": check_marching,
    "networks": check_networks,
    "motion": check_motion,
}


def run_all(seed=0):
    results = []
    for name, fn in CHECKS.items():
        start = time.perf_counter()
        err, n = fn(seed=seed)
        results.append(CheckResult(name, err, TOLERANCES[name], n, time.perf_counter() - start))
    return results
