"""Static shape fitting: optimise grid offsets and SDF values against a target mesh."""

from dataclasses import dataclass, field

import numpy as np

from tetmotion.diff import ops
from tetmotion.diff.optim import optimizer_step, sgd
from tetmotion.diff.tape import Tape
from tetmotion.errors import FitDiverged, InvalidArgument
from tetmotion.fit.chamfer import chamfer_node
from tetmotion.geometry import (NearestNeighborIndex, barycentric_points, sample_surface,
                                signed_distance)
from tetmotion.march import surface_points, surface_topology
from tetmotion.mesh import SurfaceMesh
from tetmotion.tetgrid import apply_offsets, build_uniform_grid, with_sdf

DEFAULT_SAMPLES = 10_000
MAX_EMPTY_STREAK = 25


@dataclass(frozen=True)
class LossWeights:
    cd: float = 1.0
    sdf: float = 0.1
    vol: float = 1.0
    reg: float = 1e-2

    def __post_init__(self):
        vals = (self.cd, self.sdf, self.vol, self.reg)
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise InvalidArgument(f"loss weights must be finite and non-negative, got {vals}")
        if not any(vals):
            raise InvalidArgument("at least one loss weight must be positive")


def stream_seed(*keys):
    """Child seed for a (seed, purpose, ...) key; stable across runs."""
    return np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0]


@dataclass
class ShapeFitResult:
    grid: object
    trace: list = field(default_factory=list)  # dicts per evaluated iteration
    best_iteration: int = 0
    best_loss: float = np.inf


@dataclass
class _TargetCache:
    mesh: SurfaceMesh
    points: np.ndarray
    index: NearestNeighborIndex
    sd_positions: np.ndarray = None
    sd_values: np.ndarray = None

    def sdf_at(self, positions):
        if self.sd_positions is None or not np.array_equal(positions, self.sd_positions):
            self.sd_positions = positions.copy()
            self.sd_values = signed_distance(self.mesh, positions).values
        return self.sd_values


def _shape_loss(grid, params, target, weights, samples, seed, squared):
    tape = Tape()
    raw = tape.variable(params["offsets"], name="offsets")
    s = tape.variable(params["sdf"], name="sdf")
    pos = ops.add(ops.clip(raw, grid.offset_bound), grid.rest_positions)
    terms = {}
    total = None
    topo = surface_topology(grid.tets, s.value)
    empty = len(topo.triangles) == 0
    if weights.cd > 0 and not empty:
        surf = surface_points(pos, s, topo.edges)
        mesh = SurfaceMesh(surf.value, topo.triangles)
        if mesh.face_areas().sum() > 0:
            smp = sample_surface(mesh, samples, seed)
            pts = barycentric_points(surf, topo.triangles, smp.face, smp.bary)
            cd = chamfer_node(pts, target.points, squared, target.index)
            terms["cd"] = float(cd.value)
            total = ops.mul(cd, weights.cd)
        else:
            empty = True
    if weights.sdf > 0:
        goal = target.sdf_at(pos.value)
        l_sdf = ops.mean(ops.abs(ops.sub(s, goal)))
        terms["sdf"] = float(l_sdf.value)
        term = ops.mul(l_sdf, weights.sdf)
        total = term if total is None else ops.add(total, term)
    if total is None:
        return np.nan, None, terms, True
    grads = tape.backward(total)
    return float(total.value), {"offsets": grads["offsets"], "sdf": grads["sdf"]}, terms, empty


def fit_shape(grid, target, weights=None, budget=300, optimizer=None, samples=DEFAULT_SAMPLES,
              seed=0, squared=True, log=None):
    """Fit ``grid`` offsets and SDF to ``target``; returns the best-loss state.

    The target SDF is queried at the current deformed vertices and treated as
    a constant, so with ``weights.cd == 0`` the offsets receive no gradient.
    """
    if not target.is_closed or target.is_empty:
        raise InvalidArgument("target mesh must be closed and non-empty")
    if int(budget) != budget or budget < 0:
        raise InvalidArgument("budget must be a non-negative integer")
    weights = weights or LossWeights()
    opt = optimizer or sgd()
    tpts = sample_surface(target, samples, stream_seed(seed, 1)).points
    cache = _TargetCache(target, tpts, NearestNeighborIndex(tpts))
    params = {"offsets": grid.offsets.copy(), "sdf": grid.sdf.copy()}
    result = ShapeFitResult(grid)
    best_params = params
    streak = 0
    for it in range(budget + 1):
        loss, grads, terms, empty = _shape_loss(grid, params, cache, weights, samples,
                                                stream_seed(seed, 2, it), squared)
        streak = streak + 1 if empty else 0
        if streak > MAX_EMPTY_STREAK:
            raise FitDiverged(f"surface extraction empty for {streak} consecutive iterations")
        if np.isfinite(loss) and loss < result.best_loss:
            result.best_loss = loss
            result.best_iteration = it
            best_params = params
        result.trace.append({"iteration": it, "loss": loss, "best": result.best_loss,
                             "cd": terms.get("cd", np.nan), "sdf": terms.get("sdf", np.nan),
                             "empty": int(empty)})
        if log is not None:
            log(result.trace[-1])
        if it == budget or grads is None:
            continue
        params = optimizer_step(opt, params, grads)
    result.grid = with_sdf(apply_offsets(grid, best_params["offsets"]), best_params["sdf"])
    return result


def canonical_grid(mesh, resolution):
    """Undeformed grid whose SDF is the exact signed distance to ``mesh``."""
    grid = build_uniform_grid(resolution)
    return with_sdf(grid, signed_distance(mesh, grid.vertices).values)
