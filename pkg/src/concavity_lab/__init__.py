"""Numerical laboratory for power- and log-concavity of solutions of
semilinear elliptic problems on planar convex domains."""

from .domain import ConvexDomain, DomainMask, GridSpec, build_mask
from .fields import GridField, Transform, apply_transform
from .solver import Nonlinearity, solve_eigen_first, solve_perturbed, solve_poisson, solve_semilinear
from .convexity import SearchOptions, defect_sup
from .envelope import concave_envelope_1d, concave_envelope_2d, hyers_ulam_ratio
from .experiments import ExperimentSpec, TheoremReport, emit_report, run

__version__ = "0.1.0"

__all__ = [
    "ConvexDomain", "DomainMask", "GridSpec", "build_mask",
    "GridField", "Transform", "apply_transform",
    "Nonlinearity", "solve_eigen_first", "solve_perturbed", "solve_poisson", "solve_semilinear",
    "SearchOptions", "defect_sup",
    "concave_envelope_1d", "concave_envelope_2d", "hyers_ulam_ratio",
    "ExperimentSpec", "TheoremReport", "emit_report", "run",
]
