"""Metrics: chamfer to ground truth, endpoint error, accuracies, volume curves."""

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from tetmotion.errors import InvalidArgument
from tetmotion.fit.chamfer import chamfer
from tetmotion.fit.shape import stream_seed
from tetmotion.geometry import normalized_volume, sample_surface

SCHEMA_VERSION = 1
STRICT_THRESHOLD = 0.025
RELAXED_THRESHOLD = 0.05
EVAL_SAMPLES = 10_000
EVAL_SEED_OFFSET = 1_000_003  # keeps evaluation samples apart from training samples


def _pairs(pred, gt):
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    g = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if p.shape != g.shape:
        raise InvalidArgument(f"correspondence length mismatch: {len(p)} vs {len(g)}")
    if len(p) == 0:
        raise InvalidArgument("no corresponded points")
    return np.linalg.norm(p - g, axis=1)


def epe(pred, gt):
    """Mean Euclidean distance between corresponded points."""
    return float(np.mean(_pairs(pred, gt)))


def accuracy(pred, gt, threshold):
    """Fraction of pairs closer than ``threshold`` (strict)."""
    if not threshold > 0:
        raise InvalidArgument("threshold must be positive")
    return float(np.mean(_pairs(pred, gt) < threshold))


@dataclass
class FrameMetrics:
    frame: int
    cd: float
    epe: float
    acc_s: float
    acc_r: float
    volume_pred: float
    volume_gt: float


@dataclass
class MetricsReport:
    frames: list
    config: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def aggregates(self):
        out = {}
        for key in ("cd", "epe", "acc_s", "acc_r"):
            vals = np.array([getattr(f, key) for f in self.frames])
            out[key] = {"mean": float(vals.mean()), "max": float(vals.max())}
        gap = np.array([abs(f.volume_pred - f.volume_gt) for f in self.frames])
        out["volume_gap"] = {"mean": float(gap.mean()), "max": float(gap.max())}
        return out

    def to_dict(self):
        return {"schema_version": self.schema_version, "config": self.config,
                "aggregates": self.aggregates(), "frames": [asdict(f) for f in self.frames]}

    def write(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "metrics.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        names = list(asdict(self.frames[0]))
        with open(d / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for f in self.frames:
                w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(f).values()])
        return d / "metrics.json"

    def summary(self):
        agg = self.aggregates()
        return "\n".join([
            f"{'metric':<12}{'mean':>12}{'max':>12}",
            *(f"{k:<12}{v['mean']:>12.6f}{v['max']:>12.6f}" for k, v in agg.items()),
        ])


def evaluate_run(predicted, reference, dataset, eval_seed=0, samples=EVAL_SAMPLES, config=None):
    """Compare predicted per-frame meshes with the dataset's ground truth.

    ``predicted[t].positions`` must correspond index-wise with ``reference``
    (the canonical points the prediction was advected from); the ground-truth
    image of each point is the analytic motion applied to it.  Prediction and
    ground truth are sampled with the same per-frame evaluation seed.
    """
    if len(predicted) != len(dataset.frames):
        raise InvalidArgument(f"{len(predicted)} predicted frames for {len(dataset.frames)} in the dataset")
    reference = np.asarray(reference, dtype=np.float64)
    rows = []
    for t, (pred, gt) in enumerate(zip(predicted, dataset.frames)):
        s = stream_seed(eval_seed + EVAL_SEED_OFFSET, t)
        cd = chamfer(sample_surface(pred, samples, s).points, sample_surface(gt, samples, s).points)
        truth = dataset.motion.apply(reference, t)
        rows.append(FrameMetrics(
            t, cd, epe(pred.positions, truth),
            accuracy(pred.positions, truth, STRICT_THRESHOLD),
            accuracy(pred.positions, truth, RELAXED_THRESHOLD),
            normalized_volume(pred), normalized_volume(gt)))
    return MetricsReport(rows, dict(config or {}))
