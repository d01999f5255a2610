"""Deformable tetrahedral grids with differentiable marching tetrahedra for shape and motion fitting."""

from tetmotion._backend import active as active_backend
from tetmotion.errors import (ContractViolation, FitDiverged, InvalidArgument, NumericError,
                              TetMotionError)
from tetmotion.geometry import (NearestNeighborIndex, PlaneSpec, enclosed_volume, normalized_volume,
                                plane_section, sample_surface, signed_distance, winding_number)
from tetmotion.march import backward_surface, classify_tet, edge_crossing, marching_tetrahedra
from tetmotion.mesh import SurfaceMesh
from tetmotion.tetgrid import TetGrid, apply_offsets, build_uniform_grid, set_sdf_from_field

__version__ = "0.1.0"

__all__ = [
    "ContractViolation", "FitDiverged", "InvalidArgument", "NearestNeighborIndex", "NumericError",
    "PlaneSpec", "SurfaceMesh", "TetGrid", "TetMotionError", "active_backend", "apply_offsets",
    "backward_surface", "build_uniform_grid", "classify_tet", "edge_crossing", "enclosed_volume",
    "marching_tetrahedra", "normalized_volume", "plane_section", "sample_surface",
    "set_sdf_from_field", "signed_distance", "winding_number",
]
