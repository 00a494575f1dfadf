"""Discrete p-energy forms, p-harmonic solvers, and p-resistance geometry
on self-similar fractals."""

__version__ = "0.1.0"

from .energy import GraphForm, TracedForm, path_form
from .solver import BoundaryProblem, SolverError, harmonic_extension
from .structure import FractalStructure, build_builtin, build_path, \
    build_sierpinski_gasket, refine
# note: the `trace` *function* is reached via presistance.trace.trace; the
# top-level attribute stays the submodule
from .trace import WeightVector, eigenform, eigenvalue, lift, renormalize, \
    self_similar_weight, symmetric_seed

__all__ = [
    "GraphForm", "TracedForm", "path_form",
    "BoundaryProblem", "SolverError", "harmonic_extension",
    "FractalStructure", "build_builtin", "build_path",
    "build_sierpinski_gasket", "refine",
    "WeightVector", "eigenform", "eigenvalue", "lift", "renormalize",
    "self_similar_weight", "symmetric_seed",
    "__version__",
]
