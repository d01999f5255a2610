"""Shape and motion fitting."""

from tetmotion.fit.chamfer import chamfer, chamfer_node
from tetmotion.fit.model import MODEL_KINDS, DeformationModel, deform_step, neighbor_mean_operator
from tetmotion.fit.motion import (MotionFitResult, MotionSetup, fit_motion, predict_surfaces,
                                  reextracted_surface)
from tetmotion.fit.observations import FullMesh, Slices, Volume
from tetmotion.fit.shape import LossWeights, ShapeFitResult, canonical_grid, fit_shape

__all__ = [
    "MODEL_KINDS", "DeformationModel", "FullMesh", "LossWeights", "MotionFitResult",
    "MotionSetup", "ShapeFitResult", "Slices", "Volume", "canonical_grid", "chamfer",
    "chamfer_node", "deform_step", "fit_motion", "fit_shape", "neighbor_mean_operator",
    "predict_surfaces", "reextracted_surface",
]
