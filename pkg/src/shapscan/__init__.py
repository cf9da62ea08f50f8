"""Deterministic Shapley attribution plus a lesion detection and review pipeline."""

from .errors import (
    CapacityError,
    DimensionError,
    ImageFormatError,
    NotFoundError,
    ParameterError,
    PredictorError,
    ProtocolError,
    ShapscanError,
    StateConflictError,
)
from .shapley import (
    Attribution,
    Dataset,
    Query,
    SelectionMatrix,
    build_selection_matrix,
    coalition_count,
    exact_shapley,
    expected_values,
    hypershap,
    shapley_weight,
    subsample_background,
    tau,
)

__all__ = [
    "Attribution",
    "CapacityError",
    "Dataset",
    "DimensionError",
    "ImageFormatError",
    "NotFoundError",
    "ParameterError",
    "PredictorError",
    "ProtocolError",
    "Query",
    "SelectionMatrix",
    "ShapscanError",
    "StateConflictError",
    "build_selection_matrix",
    "coalition_count",
    "exact_shapley",
    "expected_values",
    "hypershap",
    "shapley_weight",
    "subsample_background",
    "tau",
]

__version__ = "0.1.0"
