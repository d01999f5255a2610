"""Motion fitting: a deformation model moves the canonical grid per frame.

The canonical surface is extracted once.  Each surface vertex then follows
its generating grid edge: it stays at parameter ``t`` between the moved
endpoints, so topology and vertex correspondence are shared by all frames.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from tetmotion.diff import ops
from tetmotion.diff.layers import bind
from tetmotion.diff.optim import adam, optimizer_step
from tetmotion.diff.tape import Tape
from tetmotion.errors import InvalidArgument, NumericError
from tetmotion.fit.chamfer import chamfer_node
from tetmotion.fit.model import DeformationModel, band_positions, build_band, neighbor_mean_operator
from tetmotion.fit.observations import FullMesh, Slices, Volume
from tetmotion.fit.shape import LossWeights, stream_seed
from tetmotion.geometry import (DOMAIN_VOLUME, NearestNeighborIndex, barycentric_points,
                                plane_section_node, sample_surface, section_edges, volume_node)
from tetmotion.march import marching_tetrahedra
from tetmotion.mesh import SurfaceMesh

DEFAULT_TRAIN_SAMPLES = 5_000
SEQUENCE_STEPS = 3  # refinement steps when every frame is a full mesh
OBSERVED_STEPS = 2  # slices or volume


@dataclass
class MotionSetup:
    """Everything derived from the canonical grid that stays fixed while fitting."""

    grid: object
    surface: SurfaceMesh
    band: object
    edges_local: np.ndarray  # provenance edges as band-local indices
    weights: np.ndarray  # (K, 2) advection weights (1 - t, t)
    reextract: bool = False

    @classmethod
    def build(cls, grid, steps, kind, reextract=False):
        surface = marching_tetrahedra(grid)
        if surface.is_empty:
            raise InvalidArgument("canonical grid has an empty surface")
        graph = neighbor_mean_operator(grid.tets, grid.num_vertices)
        active = np.unique(surface.provenance.edges)
        if reextract:
            active = np.arange(grid.num_vertices)
        rings = steps - 1 if kind == "gru" else 0
        band = build_band(active, graph, grid.vertices, rings)
        t = surface.provenance.t
        return cls(grid, surface, band, band.local(surface.provenance.edges),
                   np.stack([1.0 - t, t], axis=1), reextract)

    def surface_node(self, band_pos):
        return ops.combine(band_pos, self.edges_local, self.weights)


@dataclass
class _FrameTarget:
    kind: str
    points: np.ndarray = None
    index: object = None
    planes: tuple = ()
    contours: tuple = ()
    contour_index: tuple = ()
    value: float = 0.0


def _prepare(obs, samples, seed, frame):
    if isinstance(obs, FullMesh):
        pts = sample_surface(obs.target, samples, stream_seed(seed, 3, frame)).points
        return _FrameTarget("full", pts, NearestNeighborIndex(pts))
    if isinstance(obs, Slices):
        idx = tuple(NearestNeighborIndex(c) if len(c) else None for c in obs.contours)
        return _FrameTarget("slices", planes=obs.planes, contours=obs.contours, contour_index=idx)
    if isinstance(obs, Volume):
        return _FrameTarget("volume", value=float(obs.value))
    raise InvalidArgument(f"unsupported observation type {type(obs).__name__}")


def frame_loss(model, params, setup, target, frame, weights, samples, seed, squared=True):
    """Loss and parameter gradients for one frame on a private tape."""
    tape = Tape()
    bound = bind(tape, params)
    pos = band_positions(model, bound, frame, setup.band, setup.grid.vertices)
    surf = setup.surface_node(pos)
    tri = setup.surface.triangles
    total = None
    terms = {}
    if target.kind == "full":
        mesh = SurfaceMesh(surf.value, tri)
        smp = sample_surface(mesh, samples, seed)
        pts = barycentric_points(surf, tri, smp.face, smp.bary)
        cd = chamfer_node(pts, target.points, squared, target.index)
        terms["cd"] = float(cd.value)
        total = ops.mul(cd, weights.cd)
    else:
        if target.kind == "slices":
            mesh = SurfaceMesh(surf.value, tri)
            cds = []
            for plane, contour, cidx in zip(target.planes, target.contours, target.contour_index):
                sec = section_edges(mesh, plane)
                if len(sec.a) == 0 or cidx is None:
                    continue
                pts = plane_section_node(surf, sec, plane)
                cds.append(chamfer_node(pts, contour, squared, cidx))
            if cds:
                cd = cds[0]
                for c in cds[1:]:
                    cd = ops.add(cd, c)
                terms["cd"] = float(cd.value)
                total = ops.mul(cd, weights.cd)
        else:
            vol = ops.mul(volume_node(surf, tri), 1.0 / DOMAIN_VOLUME)
            err = ops.abs(ops.sub(vol, target.value))
            terms["vol"] = float(err.value)
            total = ops.mul(err, weights.vol)
        active = ops.take(pos, setup.band.active_local)
        v0 = setup.grid.vertices[setup.band.index[setup.band.active_local]]
        reg = ops.mean(ops.sum(ops.square(ops.sub(active, v0)), axis=1))
        terms["reg"] = float(reg.value)
        reg = ops.mul(reg, weights.reg)
        total = reg if total is None else ops.add(total, reg)
    grads = tape.backward(total)
    return float(total.value), grads.named(), terms


@dataclass
class MotionFitResult:
    model: DeformationModel
    setup: MotionSetup
    trace: list = field(default_factory=list)  # one dict per iteration
    optimizer: object = None


def fit_motion(canonical, sequence, kind="gru", weights=None, budget=150, optimizer=None,
               steps=None, latent_dim=16, hidden=64, samples=DEFAULT_TRAIN_SAMPLES, seed=0,
               threads=1, squared=True, reextract=False, log=None):
    """Jointly fit deformation weights and per-frame codes to ``sequence``.

    ``steps`` defaults to 3 for full-mesh sequences and 2 otherwise.
    One iteration evaluates every frame and applies a single optimizer step to
    the summed gradient.  Frames may run on ``threads`` workers; gradients are
    always summed in frame order, so results do not depend on ``threads``.
    """
    if len(sequence) == 0:
        raise InvalidArgument("sequence has no observations")
    if int(budget) != budget or budget < 0:
        raise InvalidArgument("budget must be a non-negative integer")
    weights = weights or LossWeights()
    if steps is None:
        steps = SEQUENCE_STEPS if all(isinstance(o, FullMesh) for o in sequence) else OBSERVED_STEPS
    setup = MotionSetup.build(canonical, steps, kind, reextract)
    model = DeformationModel.create(kind, len(sequence), canonical.num_vertices, steps,
                                    latent_dim, hidden, seed=stream_seed(seed, 4))
    opt = optimizer or adam()
    targets = [_prepare(o, samples, seed, t) for t, o in enumerate(sequence)]
    result = MotionFitResult(model, setup, optimizer=opt)
    best = np.inf
    frames = range(len(sequence))
    with threadpool_limits(1), ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for it in range(budget + 1):
            params = model.params

            def run(t, params=params, it=it):
                return frame_loss(model, params, setup, targets[t], t, weights, samples,
                                  stream_seed(seed, 5, it, t), squared)

            outs = list(pool.map(run, frames))
            losses = [o[0] for o in outs]
            total = float(np.sum(losses))
            if not np.isfinite(total):
                raise NumericError(f"non-finite motion loss at iteration {it}")
            best = min(best, total)
            row = {"iteration": it, "loss": total, "best": best}
            for name in sorted({k for o in outs for k in o[2]}):
                row[name] = float(np.sum([o[2][name] for o in outs if name in o[2]]))
            row.update({f"frame_{t:03d}": v for t, v in enumerate(losses)})
            result.trace.append(row)
            if log is not None:
                log(row)
            if it == budget:
                break
            grads = {}
            for _, g, _ in outs:
                for name, v in g.items():
                    grads[name] = grads[name] + v if name in grads else v
            model.params = optimizer_step(opt, params, grads)
    return result


def predict_band(model, setup, frame):
    tape = Tape()
    bound = bind(tape, model.params, trainable=False)
    return band_positions(model, bound, frame, setup.band, setup.grid.vertices).value


def predict_surfaces(model, setup):
    """Advected surface mesh for every frame (shared triangles).

    With ``setup.reextract`` the whole grid is moved and extraction re-run;
    the sign pattern is unchanged, so the result matches advection.
    """
    if setup.reextract:
        return [reextracted_surface(model, setup, t) for t in range(model.frames)]
    out = []
    for t in range(model.frames):
        pos = predict_band(model, setup, t)
        pts = (setup.weights[:, :, None] * pos[setup.edges_local]).sum(axis=1)
        out.append(SurfaceMesh(pts, setup.surface.triangles, setup.surface.provenance))
    return out


def predict_grid_positions(model, setup, frame):
    """Full grid vertex positions for ``frame``; vertices outside the band stay canonical."""
    pos = setup.grid.vertices.copy()
    pos[setup.band.index] = predict_band(model, setup, frame)
    return pos


def reextracted_surface(model, setup, frame):
    """Run marching tetrahedra on the moved grid (same signs, so same topology)."""
    return marching_tetrahedra(setup.grid, positions=predict_grid_positions(model, setup, frame))


__all__ = ["MotionSetup", "MotionFitResult", "fit_motion", "frame_loss", "predict_surfaces",
           "predict_grid_positions", "reextracted_surface"]
