"""Adaptive anisotropic Bayesian meshing for linear inverse problems."""

from .mesh import DomainSpec, TriMesh, generate_initial_mesh
from .ias import HyperPrior, IASState, PhaseSchedule, ias_solve
from .metric import MetricField, build_metric
from .remesh import adapt_mesh

__all__ = [
    "DomainSpec", "TriMesh", "generate_initial_mesh",
    "HyperPrior", "IASState", "PhaseSchedule", "ias_solve",
    "MetricField", "build_metric", "adapt_mesh",
]
__version__ = "0.1.0"
