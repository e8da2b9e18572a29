"""Isentropic pressure law, energy functionals and well-preparedness."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidParameters, NegativeDensity
from .field import TorusGrid, check_viscosity

logger = logging.getLogger(__name__)

#: Densities in ``[-CLAMP_TOL, 0)`` are treated as round-off and set to zero.
CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class FluidParams:
    """Coefficients of the scaled compressible system.

    ``epsilon`` is the inertia scale; 0 is allowed and means the overdamped
    limit system. ``lambda_`` is the second viscosity coefficient.
    """

    epsilon: float
    nu: float
    lambda_: float
    gamma: float

    def validate(self, dim: int) -> "FluidParams":
        check_viscosity(self.nu, self.lambda_)
        if not self.epsilon >= 0:
            raise InvalidParameters(f"epsilon must be >= 0, got {self.epsilon}")
        bound = 1.5 if dim == 3 else 1.0
        if not self.gamma > bound:
            raise InvalidParameters(
                f"gamma must be > {bound} in {dim}D, got {self.gamma}"
            )
        return self

    def with_epsilon(self, epsilon: float) -> "FluidParams":
        return FluidParams(epsilon, self.nu, self.lambda_, self.gamma)

    @property
    def bulk(self) -> float:
        """Longitudinal viscosity ``2 nu + lambda``."""
        return 2.0 * self.nu + self.lambda_

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EnergyBudget:
    """Energy terms at one instant; ``total`` is the left side of the energy balance."""

    time: float
    kinetic_scaled: float
    internal: float
    dissipation_cum: float

    @property
    def energy(self) -> float:
        return self.kinetic_scaled + self.internal

    @property
    def total(self) -> float:
        return self.kinetic_scaled + self.internal + self.dissipation_cum

    CSV_COLUMNS = ("time", "kinetic_scaled", "internal", "dissipation_cum", "total")

    def row(self) -> list[float]:
        return [self.time, self.kinetic_scaled, self.internal, self.dissipation_cum, self.total]


def clamp_density(rho: np.ndarray, tol: float = CLAMP_TOL) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    low = float(rho.min()) if rho.size else 0.0
    if low < -tol:
        raise NegativeDensity(f"density minimum {low:.3e} below -{tol:g}")
    if low < 0:
        return np.maximum(rho, 0.0)
    return rho


def pressure(rho: np.ndarray, gamma: float) -> np.ndarray:
    """``rho**gamma`` after clamping round-off negatives."""
    rho = clamp_density(rho)
    if gamma == 2:
        return rho * rho
    return rho**gamma


def internal_energy(grid: TorusGrid, rho: np.ndarray, gamma: float) -> float:
    if not gamma > 1:
        raise InvalidParameters(f"gamma must be > 1, got {gamma}")
    return grid.integrate(pressure(rho, gamma)) / (gamma - 1.0)


def kinetic_energy_scaled(grid: TorusGrid, rho: np.ndarray, u: np.ndarray, epsilon: float) -> float:
    """``(epsilon / 2) * integral of rho |u|^2``."""
    if not epsilon >= 0:
        raise InvalidParameters(f"epsilon must be >= 0, got {epsilon}")
    return 0.5 * epsilon * grid.integrate(rho * np.sum(u * u, axis=0))


def dissipation_rate(grid: TorusGrid, u: np.ndarray, nu: float, lambda_: float) -> float:
    """``nu ||grad u||^2 + (nu + lambda) ||div u||^2`` with the Frobenius norm."""
    g = grid.grad_tensor(u)
    div = np.trace(g, axis1=0, axis2=1)
    return nu * grid.integrate(np.sum(g * g, axis=(0, 1))) + (nu + lambda_) * grid.integrate(div * div)


def well_preparedness(grid: TorusGrid, rho0: np.ndarray, u0: np.ndarray, epsilon: float) -> float:
    """``epsilon * integral of rho0 |u0|^2``; must vanish along a sweep."""
    return epsilon * grid.integrate(rho0 * np.sum(u0 * u0, axis=0))


def energy_budget(grid: TorusGrid, t: float, rho: np.ndarray, u: np.ndarray | None,
                  params: FluidParams, dissipation_cum: float) -> EnergyBudget:
    kin = 0.0 if u is None or params.epsilon == 0 else kinetic_energy_scaled(grid, rho, u, params.epsilon)
    return EnergyBudget(float(t), kin, internal_energy(grid, rho, params.gamma), float(dissipation_cum))
