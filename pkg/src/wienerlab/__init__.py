"""Capacity, Wiener-integral and boundary-decay toolkit for the singular
parabolic p-Laplacian."""

__version__ = "0.1.0"

from .capacity import CapacityProfile, CapacitySettings, capacity_profile, p_capacity  # noqa: E402
from .geometry import DomainMask, build_datum, build_domain  # noqa: E402
from .pde import FluxModel, SolverSettings, Trajectory, solve_cauchy_dirichlet  # noqa: E402
from .verify import ExperimentConfig, verify_boundary_decay  # noqa: E402
from .wiener import qo_exponent, wiener_integral  # noqa: E402

__all__ = [
    "__version__", "CapacityProfile", "CapacitySettings", "capacity_profile", "p_capacity",
    "DomainMask", "build_datum", "build_domain", "FluxModel", "SolverSettings", "Trajectory",
    "solve_cauchy_dirichlet", "ExperimentConfig", "verify_boundary_decay", "qo_exponent",
    "wiener_integral",
]
