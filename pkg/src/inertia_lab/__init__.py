"""Simulation and verification toolkit for the overdamped limit of compressible viscous flow on the torus."""

from .errors import (BlowUp, ConfigError, FloorViolation, IllPreparedData, InertiaLabError,
                     InsufficientCheckpoints, InvalidParameters, InvalidViscosity, NegativeDensity,
                     NonPositiveValue, NonZeroMean)
from .field import Field, TorusGrid, read_field, write_field
from .limit_solver import LimitSolver, LimitState, run_limit, velocity_from_density
from .model import EnergyBudget, FluidParams
from .records import RunRecord
from .scaled_solver import ScaledSolver, ScaledState, run_scaled
from .stepping import StepControl

__all__ = [
    "BlowUp", "ConfigError", "EnergyBudget", "Field", "FloorViolation", "FluidParams",
    "IllPreparedData", "InertiaLabError", "InsufficientCheckpoints", "InvalidParameters",
    "InvalidViscosity", "LimitSolver", "LimitState", "NegativeDensity", "NonPositiveValue",
    "NonZeroMean", "RunRecord", "ScaledSolver", "ScaledState", "StepControl", "TorusGrid",
    "read_field", "run_limit", "run_scaled", "velocity_from_density", "write_field",
]
__version__ = "0.1.0"
