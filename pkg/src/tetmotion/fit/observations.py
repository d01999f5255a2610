"""Per-frame evidence used by motion fitting."""

from dataclasses import dataclass

import numpy as np

from tetmotion.errors import InvalidArgument
from tetmotion.mesh import SurfaceMesh


@dataclass(frozen=True)
class FullMesh:
    target: SurfaceMesh
    mode = "full"


@dataclass(frozen=True, eq=False)
class Slices:
    """Planes with one contour point array each (a contour may be empty)."""

    planes: tuple
    contours: tuple
    mode = "slices"

    def __post_init__(self):
        if len(self.planes) == 0:
            raise InvalidArgument("a slice observation needs at least one plane")
        if len(self.planes) != len(self.contours):
            raise InvalidArgument("one contour per plane is required")
        object.__setattr__(self, "planes", tuple(self.planes))
        object.__setattr__(self, "contours", tuple(
            np.asarray(c, dtype=np.float64).reshape(-1, 3) for c in self.contours))


@dataclass(frozen=True)
class Volume:
    value: float
    mode = "volume"

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise InvalidArgument(f"normalized volume must lie in [0, 1], got {self.value}")
