"""Penalised regression splines for smooth surfaces of age and time."""
from .basis import MAX_DIMENSION, BasisWarning, SplineBasis, build_cubic_spline_basis, quantile_knots
from .design import TensorSmoothDesign, build_tensor_design
from .families import BetaLogit, Family, GaussianLog, NegativeBinomialLog, family_from_kind
from .fitting import (
    LAMBDA_GRID,
    FitError,
    FittedSmoothModel,
    GridBoundaryWarning,
    aic,
    fit,
    gcv_score,
    newton_fit,
    penalized_gradient,
    penalized_objective,
)

__all__ = [
    "MAX_DIMENSION", "BasisWarning", "SplineBasis", "build_cubic_spline_basis", "quantile_knots",
    "TensorSmoothDesign", "build_tensor_design",
    "BetaLogit", "Family", "GaussianLog", "NegativeBinomialLog", "family_from_kind",
    "LAMBDA_GRID", "FitError", "FittedSmoothModel", "GridBoundaryWarning",
    "aic", "fit", "gcv_score", "newton_fit", "penalized_gradient", "penalized_objective",
]
