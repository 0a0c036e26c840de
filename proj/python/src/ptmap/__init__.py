"""Adaptive P-spline triangular transport maps."""

from ._core import (
    ComponentFitError,
    LogDensity,
    SplineBasis,
    TriangularMap,
    aicc_penalty,
    fit,
    load_map,
    make_knots,
    profile_lambda,
    run_filter,
    sample_wavy,
)

__all__ = [
    "ComponentFitError",
    "LogDensity",
    "SplineBasis",
    "TriangularMap",
    "aicc_penalty",
    "fit",
    "load_map",
    "make_knots",
    "profile_lambda",
    "run_filter",
    "sample_wavy",
]
