"""Finite-length scaling laws for spatially coupled LDPC codes on the BEC."""

from .graph import EnsembleSpec, SpecError, Terminated, Truncated, UnterminatedEval, sample_graph
from .table import ScalingParams

__version__ = "0.1.0"

__all__ = [
    "EnsembleSpec",
    "ScalingParams",
    "SpecError",
    "Terminated",
    "Truncated",
    "UnterminatedEval",
    "sample_graph",
]
