"""Analytic deforming sequences with known correspondences, and the observations derived from them."""

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tetmotion import io
from tetmotion.errors import InvalidArgument
from tetmotion.fit.observations import FullMesh, Slices, Volume
from tetmotion.geometry import PlaneSpec, normalized_volume, plane_section, primitive
from tetmotion.mesh import SurfaceMesh

# |amplitude| limits inside which each motion is a diffeomorphism
AMPLITUDE_LIMITS = {
    "translate": 0.3,
    "squash": 0.3,
    "twist": np.pi / 2,
    "radial-pulse": 0.25,
}
PULSE_RADIUS = 0.5
DEFAULT_FRAMES = 25
STACK_SIZE = 9
PLACEMENTS = ("central", "strided", "explicit")
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class AnalyticMotion:
    """Periodic motion driven by ``s(t) = sin(2 pi t / period)``; frame 0 is the identity.

    translate     p + (a s, 0, 0)
    squash        z scaled by (1 + a s), x and y by (1 + a s)^-1/2 (volume preserving)
    twist         rotation about z by a s z / 0.5
    radial-pulse  p scaled by 1 + (2 a s) exp((1 - |p|^2 / 0.25) / 2); the sphere of
                  radius 0.5 maps exactly to radius 0.5 + a s
    """

    kind: str
    amplitude: float
    period: int

    def __post_init__(self):
        if self.kind not in AMPLITUDE_LIMITS:
            raise InvalidArgument(f"unknown motion {self.kind!r}; expected one of {sorted(AMPLITUDE_LIMITS)}")
        if not np.isfinite(self.amplitude) or abs(self.amplitude) > AMPLITUDE_LIMITS[self.kind]:
            raise InvalidArgument(
                f"{self.kind} amplitude {self.amplitude} outside [-{AMPLITUDE_LIMITS[self.kind]:.4g}, "
                f"{AMPLITUDE_LIMITS[self.kind]:.4g}]")
        if int(self.period) != self.period or self.period < 1:
            raise InvalidArgument("period must be a positive integer")

    def phase(self, t):
        return np.sin(2.0 * np.pi * t / self.period)

    def apply(self, points, t):
        p = np.asarray(points, dtype=np.float64)
        a = self.amplitude * self.phase(t)
        if self.kind == "translate":
            return p + np.array([a, 0.0, 0.0])
        if self.kind == "squash":
            q = p.copy()
            q[..., 2] *= 1.0 + a
            q[..., :2] *= (1.0 + a) ** -0.5
            return q
        if self.kind == "twist":
            theta = a * p[..., 2] / 0.5
            c, s = np.cos(theta), np.sin(theta)
            q = p.copy()
            q[..., 0] = c * p[..., 0] - s * p[..., 1]
            q[..., 1] = s * p[..., 0] + c * p[..., 1]
            return q
        r2 = (p * p).sum(axis=-1, keepdims=True)
        k = 2.0 * a / (2.0 * PULSE_RADIUS)  # = a / 0.5
        return p * (1.0 + k * np.exp((1.0 - r2 / PULSE_RADIUS ** 2) / 2.0))

    def to_dict(self):
        return {"kind": self.kind, "amplitude": float(self.amplitude), "period": int(self.period)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d["amplitude"]), int(d["period"]))


@dataclass
class SequenceDataset:
    base: str
    motion: AnalyticMotion
    frames: list  # SurfaceMesh per frame, shared triangles
    seed: int = 0
    base_params: dict = field(default_factory=dict)

    @property
    def canonical(self):
        return self.frames[0]

    def __len__(self):
        return len(self.frames)


def generate_sequence(base, motion, frames=DEFAULT_FRAMES, seed=0, **base_params):
    """Apply ``motion`` to every vertex of a primitive for frames ``0 .. frames - 1``.

    ``seed`` is recorded for provenance; generation itself is deterministic.
    """
    if int(frames) != frames or frames < 1:
        raise InvalidArgument(f"frames must be a positive integer, got {frames}")
    canonical = primitive(base, **base_params)
    meshes = [SurfaceMesh(motion.apply(canonical.positions, t), canonical.triangles)
              for t in range(frames)]
    meshes[0] = canonical
    return SequenceDataset(base, motion, meshes, int(seed), dict(base_params))


# observations --------------------------------------------------------------

@dataclass(frozen=True)
class SliceSpec:
    k: int = 3
    placement: str = "central"
    offsets: tuple = ()

    def __post_init__(self):
        if self.placement not in PLACEMENTS:
            raise InvalidArgument(f"unknown placement {self.placement!r}; expected one of {PLACEMENTS}")
        if self.placement == "explicit":
            if not self.offsets:
                raise InvalidArgument("explicit placement needs offsets")
            object.__setattr__(self, "k", len(self.offsets))
        elif int(self.k) != self.k or self.k < 1:
            raise InvalidArgument(f"slice count must be >= 1, got {self.k}")


def slice_planes(reference, spec):
    """z-normal planes placed relative to the z extent of ``reference``.

    The extent is split into a stack of ``STACK_SIZE`` evenly spaced planes
    (spacing ``h``).  ``central`` takes ``k`` neighbouring planes around the
    middle at spacing ``h``; ``strided`` uses spacing ``2 h``.
    """
    if spec.placement == "explicit":
        return [PlaneSpec.z(float(z)) for z in spec.offsets]
    z = reference.positions[:, 2]
    lo, hi = float(z.min()), float(z.max())
    h = (hi - lo) / (STACK_SIZE + 1)
    step = h if spec.placement == "central" else 2.0 * h
    center = 0.5 * (lo + hi)
    return [PlaneSpec.z(center + step * (j - (spec.k - 1) / 2.0)) for j in range(spec.k)]


def extract_observation(frame_mesh, mode, seed=0, planes=None):
    """Degrade a frame to the requested evidence.

    ``mode`` is ``"full"``, ``"volume"`` or a :class:`SliceSpec`; slice planes
    default to ``slice_planes(frame_mesh, mode)`` but are normally shared
    across frames by passing ``planes``.  ``seed`` is accepted for interface
    symmetry; extraction is deterministic.
    """
    del seed
    if mode == "full":
        return FullMesh(frame_mesh)
    if mode == "volume":
        return Volume(normalized_volume(frame_mesh))
    if isinstance(mode, SliceSpec):
        planes = planes if planes is not None else slice_planes(frame_mesh, mode)
        contours = [plane_section(frame_mesh, p) for p in planes]
        for p, c in zip(planes, contours):
            if len(c) == 0:
                warnings.warn(f"plane {p} misses the mesh; keeping an empty contour", RuntimeWarning,
                              stacklevel=2)
        return Slices(tuple(planes), tuple(contours))
    raise InvalidArgument(f"unknown observation mode {mode!r}")


def observe_sequence(dataset, mode, seed=0):
    """Observations for every frame; slice planes come from the canonical frame."""
    planes = slice_planes(dataset.canonical, mode) if isinstance(mode, SliceSpec) else None
    return [extract_observation(m, mode, seed, planes) for m in dataset.frames]


# disk layout ---------------------------------------------------------------

def save_dataset(directory, dataset, slices=SliceSpec()):
    """Write manifest.json, frame_%03d.obj and per-frame observations."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {"frames": [], "obs_full": [], "obs_slices": [], "obs_volume": "obs_volume.txt"}
    planes = slice_planes(dataset.canonical, slices)
    volumes = []
    for t, mesh in enumerate(dataset.frames):
        name = f"frame_{t:03d}.obj"
        io.write_obj(d / name, mesh)
        files["frames"].append(name)
        io.write_obj(d / f"obs_{t:03d}.obj", mesh)
        files["obs_full"].append(f"obs_{t:03d}.obj")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            obs = extract_observation(mesh, slices, planes=planes)
        pts = np.concatenate([c for c in obs.contours]) if obs.contours else np.zeros((0, 3))
        ids = np.concatenate([np.full(len(c), i) for i, c in enumerate(obs.contours)])
        io.write_contours(d / f"obs_{t:03d}.csv", pts, ids)
        files["obs_slices"].append(f"obs_{t:03d}.csv")
        volumes.append(normalized_volume(mesh))
    (d / files["obs_volume"]).write_text("".join(f"{v!r}\n" for v in volumes))
    manifest = {
        "version": MANIFEST_VERSION,
        "base": dataset.base,
        "base_params": dataset.base_params,
        "motion": dataset.motion.to_dict(),
        "frames": len(dataset.frames),
        "seed": dataset.seed,
        "slices": {"k": slices.k, "placement": slices.placement, "offsets": list(slices.offsets),
                   "planes": [[list(p.normal), p.offset] for p in planes]},
        "files": files,
    }
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(directory):
    path = Path(directory) / "manifest.json"
    return json.loads(path.read_text())


def load_dataset(directory):
    d = Path(directory)
    manifest = load_manifest(d)
    frames = [io.read_obj(d / name) for name in manifest["files"]["frames"]]
    return SequenceDataset(manifest["base"], AnalyticMotion.from_dict(manifest["motion"]), frames,
                           manifest["seed"], manifest.get("base_params", {}))


def load_slice_observations(directory):
    """Per-frame Slices read back from the CSV files."""
    d = Path(directory)
    manifest = load_manifest(d)
    planes = [PlaneSpec(tuple(n), off) for n, off in manifest["slices"]["planes"]]
    out = []
    for name in manifest["files"]["obs_slices"]:
        pts, ids = io.read_contours(d / name)
        out.append(Slices(tuple(planes), tuple(pts[ids == i] for i in range(len(planes)))))
    return out


def load_volume_observations(directory):
    d = Path(directory)
    manifest = load_manifest(d)
    text = (d / manifest["files"]["obs_volume"]).read_text().split()
    return [Volume(float(v)) for v in text]
