"""geodv: minimum-dV two-impulse phase-free orbit transfers computed as
geodesics of the Jacobi metric, for Keplerian and oblate (J2) fields."""

from .ellipse import EllipseTransfer, a_min, energy_of_sma, sma_of_energy
from .heatflow import GeodesicResult, HeatFlowConfig, flow_to_geodesic
from .metric import DiscreteCurve, JacobiMetric
from .planner import (PlannerConfig, TransferProblem, TransferSolution,
                      coarse_search, contour_grid, energy_bounds, refine,
                      refine_only, solve)
from .twobody import BodyConstants, GravityKind, GravityModel, OrbitState

__version__ = "0.1.0"

__all__ = [
    "BodyConstants", "DiscreteCurve", "EllipseTransfer", "GeodesicResult",
    "GravityKind", "GravityModel", "HeatFlowConfig", "JacobiMetric",
    "OrbitState", "PlannerConfig", "TransferProblem", "TransferSolution",
    "a_min", "coarse_search", "contour_grid", "energy_bounds",
    "energy_of_sma", "flow_to_geodesic", "refine", "refine_only",
    "sma_of_energy", "solve",
]
