"""Adiabatic density-path energies from inverted Kohn-Sham potentials on 1D grids."""

__version__ = "0.1.0"

from .grid import Grid1D, GridFunction, apply_kinetic, kinetic_matrix  # noqa: E402
from .systems import HarmonicTrap, Schedule, SoftCoulombLiH, external_potential, schedule_value  # noqa: E402
from .trajectory import DensityTrajectory  # noqa: E402

__all__ = [
    "DensityTrajectory",
    "Grid1D",
    "GridFunction",
    "HarmonicTrap",
    "Schedule",
    "SoftCoulombLiH",
    "apply_kinetic",
    "external_potential",
    "kinetic_matrix",
    "schedule_value",
]
