"""Compressible two-phase flow at low Mach number and its incompressible limit."""
from .errors import ConvergenceError, DomainError, GridError, PreconditionError, SimulationError
from .fields import FluidParams, Grid

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DomainError",
    "FluidParams",
    "Grid",
    "GridError",
    "PreconditionError",
    "SimulationError",
]
