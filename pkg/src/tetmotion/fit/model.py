"""Deformation models: free per-vertex offsets, a code-conditioned MLP, and a GCN+GRU refiner."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from tetmotion.diff import ops
from tetmotion.diff.layers import DenseLayer, GruCell, bind
from tetmotion.diff.tape import Tape
from tetmotion.errors import InvalidArgument, NumericError
from tetmotion.tetgrid import grid_edges

MODEL_KINDS = ("free-offsets", "mlp", "gru")
DEFAULT_LATENT = 16
DEFAULT_HIDDEN = 64
CODE_INIT_STD = 0.01


@dataclass
class DeformationModel:
    """All trainable state lives in ``params`` (name -> float64 array)."""

    kind: str
    frames: int
    steps: int = 2
    latent_dim: int = DEFAULT_LATENT
    hidden: int = DEFAULT_HIDDEN
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise InvalidArgument(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.steps < 1:
            raise InvalidArgument("steps must be at least 1")
        if self.frames < 1:
            raise InvalidArgument("a model needs at least one frame")

    @classmethod
    def create(cls, kind, frames, num_vertices, steps=2, latent_dim=DEFAULT_LATENT,
               hidden=DEFAULT_HIDDEN, seed=0):
        model = cls(kind, frames, steps, latent_dim, hidden)
        rng = np.random.default_rng(seed)
        p = {}
        if kind == "free-offsets":
            p["free"] = np.zeros((frames, num_vertices, 3))
        else:
            p["codes"] = rng.normal(0.0, CODE_INIT_STD, size=(frames, latent_dim))
            if kind == "gru":
                p.update(DenseLayer.create(rng, 6 + latent_dim, hidden, "tanh").params("gcn"))
                p.update(GruCell.create(rng, hidden + 3, hidden).params("gru"))
                head_in = 3 + hidden
            else:
                head_in = 3 + latent_dim
            p.update(DenseLayer.create(rng, head_in, hidden, "tanh").params("head0"))
            # zero last layer: training starts from the identity motion
            p.update(DenseLayer.create(rng, hidden, 3, "identity", zero=True).params("head1"))
        model.params = p
        return model

    def metadata(self):
        return {"kind": self.kind, "frames": self.frames, "steps": self.steps,
                "latent_dim": self.latent_dim, "hidden": self.hidden}

    @classmethod
    def from_metadata(cls, meta, params):
        return cls(meta["kind"], meta["frames"], meta["steps"], meta["latent_dim"],
                   meta["hidden"], dict(params))

    def num_parameters(self):
        return int(sum(v.size for v in self.params.values()))


def _dense(bound, prefix, activation):
    w = bound[f"{prefix}.weight"].value
    return DenseLayer(w, np.zeros(len(w)), activation)


def _gru(bound):
    return GruCell(*(bound[f"gru.{k}"].value for k in GruCell._NAMES))


def neighbor_mean_operator(tets, num_vertices):
    """Row-normalised adjacency of the tet edge graph as a CSR matrix."""
    e = grid_edges(tets)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(num_vertices, num_vertices))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 0.0)
    return (sp.diags(inv) @ adj).tocsr()


def _step_nodes(model, bound, v, h, code_rows, nbr_mean):
    """One refinement step on tape nodes.  ``nbr_mean`` maps positions to neighbour means."""
    if model.kind == "gru":
        feat = _dense(bound, "gcn", "tanh").forward(ops.concat([nbr_mean(v), v, code_rows]), bound, "gcn")
        h = _gru(bound).forward(ops.concat([feat, v]), h, bound, "gru")
        x = ops.concat([v, h])
    else:
        x = ops.concat([v, code_rows])
    hid = _dense(bound, "head0", "tanh").forward(x, bound, "head0")
    delta = _dense(bound, "head1", "identity").forward(hid, bound, "head1")
    return ops.add(v, delta), h


def deform_step(model, positions, hidden, code, graph=None):
    """Numeric single refinement step.

    ``code`` is the latent vector for mlp/gru models and the per-vertex
    offset array for free-offsets models.  ``graph`` is the neighbour-mean
    operator (required for gru).
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise InvalidArgument(f"positions must be (N, 3), got {positions.shape}")
    n = len(positions)
    if model.kind == "free-offsets":
        code = np.asarray(code, dtype=np.float64)
        if code.shape != positions.shape:
            raise InvalidArgument(f"free offsets shape {code.shape} != positions {positions.shape}")
        return positions + code, hidden
    code = np.asarray(code, dtype=np.float64).reshape(-1)
    if code.shape != (model.latent_dim,):
        raise InvalidArgument(f"code has {code.size} entries, expected {model.latent_dim}")
    tape = Tape()
    bound = bind(tape, model.params, trainable=False)
    v = tape.constant(positions)
    code_rows = tape.constant(np.repeat(code[None, :], n, axis=0))
    if model.kind == "gru":
        if graph is None:
            raise InvalidArgument("gru models need the neighbour graph")
        hidden = np.zeros((n, model.hidden)) if hidden is None else np.asarray(hidden, dtype=np.float64)
        if hidden.shape != (n, model.hidden):
            raise InvalidArgument(f"hidden shape {hidden.shape} != {(n, model.hidden)}")
        h = tape.constant(hidden)
        new_v, new_h = _step_nodes(model, bound, v, h, code_rows, lambda x: ops.sparse_apply(graph, x))
        out = new_v.value, new_h.value
    else:
        new_v, _ = _step_nodes(model, bound, v, None, code_rows, None)
        out = new_v.value, hidden
    if not np.isfinite(out[0]).all():
        raise NumericError("deformation produced non-finite positions")
    return out


@dataclass(frozen=True)
class Band:
    """Grid vertices whose motion is evaluated for one canonical surface.

    ``active`` are the endpoints of crossing edges.  The band adds rings of
    neighbours so that repeated neighbour averaging stays exact on the
    active set; neighbours outside the band are read at canonical positions.
    """

    index: np.ndarray  # (nb,) global vertex ids, sorted
    active_local: np.ndarray  # positions of active vertices inside ``index``
    inner: sp.csr_matrix  # (nb, nb) neighbour-mean restricted to band columns
    outer: np.ndarray  # (nb, 3) contribution of out-of-band neighbours (constant)

    def __len__(self):
        return len(self.index)

    def local(self, global_ids):
        return np.searchsorted(self.index, global_ids)


def build_band(active, graph, canonical_positions, rings):
    band = np.unique(active)
    for _ in range(rings):
        band = np.union1d(band, graph[band].indices)
    sub = graph[band]
    inner = sub[:, band].tocsr()
    mask = np.ones(graph.shape[1], dtype=bool)
    mask[band] = False
    outer = np.asarray(sub[:, mask] @ canonical_positions[mask])
    return Band(band, np.searchsorted(band, np.unique(active)), inner, outer)


def band_positions(model, bound, frame, band, canonical_positions):
    """Final band vertex positions for ``frame`` as a node."""
    tape = next(iter(bound.values())).tape
    v0 = tape.constant(canonical_positions[band.index])
    nb = len(band)
    if model.kind == "free-offsets":
        n = len(canonical_positions)
        flat = ops.reshape(bound["free"], (model.frames * n, 3))
        return ops.add(v0, ops.take(flat, frame * n + band.index))
    code_rows = ops.repeat_rows(ops.take(bound["codes"], [frame]), nb)
    if model.kind == "mlp":
        v, _ = _step_nodes(model, bound, v0, None, code_rows, None)
        return v
    outer = band.outer

    def nbr_mean(x):
        return ops.add(ops.sparse_apply(band.inner, x), outer)

    v = v0
    h = tape.constant(np.zeros((nb, model.hidden)))
    for _ in range(model.steps):
        v, h = _step_nodes(model, bound, v, h, code_rows, nbr_mean)
    return v
