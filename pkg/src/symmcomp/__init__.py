"""Numerical checks of symmetrization comparison results for the weighted
Robin p-Laplacian in the plane."""

from .errors import ConfigError, HypothesisError, InvalidMeshError, NonConvergenceError, SymmcompError
from .geometry import WeightParams, isoperimetric_check, symmetrized_ball, weighted_measure, weighted_perimeter
from .mesh import ScalarField, TriMesh

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "HypothesisError",
    "InvalidMeshError",
    "NonConvergenceError",
    "ScalarField",
    "SymmcompError",
    "TriMesh",
    "WeightParams",
    "isoperimetric_check",
    "symmetrized_ball",
    "weighted_measure",
    "weighted_perimeter",
]
