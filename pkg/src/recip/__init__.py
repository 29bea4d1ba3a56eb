"""Reciprocal classes of continuous-time Markov walks on graphs."""

from .bridge import BridgeSolution, solve_bridge, transition_matrix
from .characteristics import ClassReport, chi_arc, chi_cycle, same_class
from .errors import (
    EmptyEventError,
    FitError,
    GraphValidationError,
    IntensityError,
    NotAGradientError,
    NumericalError,
    RecipError,
)
from .graph import ClosedWalk, DirectedGraph, Walk, build_graph, spanning_tree, t_basis
from .intensity import IntensitySpec, make_intensity
from .presets import get_preset
from .simulate import sample_bridge, sample_bridges, sample_path, sample_paths

__all__ = [
    "BridgeSolution", "ClassReport", "ClosedWalk", "DirectedGraph", "EmptyEventError", "FitError",
    "GraphValidationError", "IntensityError", "IntensitySpec", "NotAGradientError", "NumericalError",
    "RecipError", "Walk", "build_graph", "chi_arc", "chi_cycle", "get_preset", "make_intensity",
    "same_class", "sample_bridge", "sample_bridges", "sample_path", "sample_paths", "solve_bridge",
    "spanning_tree", "t_basis", "transition_matrix",
]
