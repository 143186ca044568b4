"""Reeb graphs, averaged coefficients and multiscale simulation for perturbed Hamiltonian systems.

The compiled kernels are used when available; ``reebsim.BACKEND`` names the
active one (``"cython"`` or ``"python"``).
"""

from ._backend import NAME as BACKEND
from .coeffs import (EdgeCoefficientTable, classify_vertices, gluing_weights, stable_set,
                     tabulate_edges)
from .errors import ReebSimError
from .graphdiff import (GraphDiffusion, GraphDiffusionConfig, mean_exit_time,
                        simulate_graph_diffusion, vertex_exit_distribution)
from .limit import expected_observable, limit_distribution, simulate_limit
from .morse import ScalarFieldModel, check_assumptions, find_critical_points, make_field
from .perturbations import IsotropicDiffusion, LinearDrift
from .reeb import GraphPoint, ReebGraph, build_reeb, validate
from .sde import SdeConfig, ergodic_average, first_exit_stats, simulate_full

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "EdgeCoefficientTable", "GraphDiffusion", "GraphDiffusionConfig", "GraphPoint",
    "IsotropicDiffusion", "LinearDrift", "ReebGraph", "ReebSimError", "ScalarFieldModel",
    "SdeConfig", "build_reeb", "check_assumptions", "classify_vertices", "ergodic_average",
    "expected_observable", "find_critical_points", "first_exit_stats", "gluing_weights",
    "limit_distribution", "make_field", "mean_exit_time", "simulate_full",
    "simulate_graph_diffusion", "simulate_limit", "stable_set", "tabulate_edges", "validate",
    "vertex_exit_distribution",
]
