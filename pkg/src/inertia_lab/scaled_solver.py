"""Pseudo-spectral integration of the epsilon-scaled compressible system.

Conservative variables ``(rho, m = rho u)`` evolve by

    d rho / dt = -div m
    d m / dt   = -div(m (x) u) + (1/eps) * (-grad rho^gamma + nu Lap u + (nu + lambda) grad div u)

with fully explicit SSP-RK3 time stepping. Products (``m (x) u`` and
``rho^gamma``) are truncated to the 2/3 box before they are differentiated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import BlowUp, FloorViolation, InvalidParameters
from .field import TorusGrid
from .model import EnergyBudget, FluidParams, internal_energy, kinetic_energy_scaled, pressure
from .records import RunRecord
from .stepping import SSPRK3_STAGES, SSPRK3_WEIGHTS, StepControl, clip_to_target

logger = logging.getLogger(__name__)

RHO_FLOOR = 1e-6
BLOWUP_FACTOR = 1e6


@dataclass(frozen=True)
class ScaledState:
    rho: np.ndarray
    mom: np.ndarray
    t: float = 0.0


class ScaledSolver:
    """One solver instance per (grid, params); not meant to be shared between threads.

    Args:
        grid: periodic lattice.
        params: fluid coefficients with ``epsilon > 0``.
        rho_floor: smallest admissible density; violated cells are clamped
            with conservative redistribution after each step.
    """

    def __init__(self, grid: TorusGrid, params: FluidParams, rho_floor: float = RHO_FLOOR):
        params.validate(grid.dim)
        if not params.epsilon > 0:
            raise InvalidParameters("scaled runs need epsilon > 0; use the limit solver for epsilon = 0")
        self.grid = grid
        self.params = params
        self.rho_floor = rho_floor
        self.floor_activations = 0
        self._ref_norms: tuple[float, float] | None = None

    # -- pointwise helpers -------------------------------------------------

    def velocity_of(self, state: ScaledState) -> np.ndarray:
        self._check_floor(state.rho)
        return state.mom / state.rho

    def _check_floor(self, rho: np.ndarray) -> None:
        low = float(rho.min())
        if low < self.rho_floor:
            raise FloorViolation(f"density {low:.3e} below floor {self.rho_floor:g}")

    # -- right-hand side ---------------------------------------------------

    def _rhs_hat(self, rho, mom):
        g, p = self.grid, self.params
        self._check_floor(rho)
        u = mom / rho
        uh = [g.fft(ui) for ui in u]
        mask = g.dealias_mask
        flux_hat = [0.0] * g.dim
        for i in range(g.dim):
            for j in range(i, g.dim):
                fij = g.fft(mom[i] * u[j]) * mask
                flux_hat[i] = flux_hat[i] + 1j * g.kd[j] * fij
                if j != i:
                    flux_hat[j] = flux_hat[j] + 1j * g.kd[i] * fij
        ph = g.fft(pressure(rho, p.gamma)) * mask
        visc = g._lame_forward_hat(uh, p.nu, p.lambda_)
        inv_eps = 1.0 / p.epsilon
        dmom = np.stack([
            g.ifft(-flux_hat[i] + inv_eps * (visc[i] - 1j * g.kd[i] * ph)) for i in range(g.dim)
        ])
        div_m = sum(1j * ka * g.fft(mi) for ka, mi in zip(g.kd, mom))
        drho = g.ifft(-div_m)
        return drho, dmom, uh

    def rhs(self, state: ScaledState) -> tuple[np.ndarray, np.ndarray]:
        """Time derivatives ``(d rho/dt, d m/dt)``."""
        drho, dmom, _ = self._rhs_hat(state.rho, state.mom)
        return drho, dmom

    def _dissipation_hat(self, uh) -> float:
        """Dissipation rate from transformed velocity components (Parseval)."""
        g, p = self.grid, self.params
        weight = _rfft_weights(g)
        grad_sq = sum(g.kd2 * np.abs(ua) ** 2 for ua in uh)
        div_sq = np.abs(sum(ka * ua for ka, ua in zip(g.kd, uh))) ** 2
        scale = g.volume / g.n ** (2 * g.dim)
        return float(scale * np.sum(weight * (p.nu * grad_sq + (p.nu + p.lambda_) * div_sq)))

    def dissipation(self, state: ScaledState) -> float:
        u = self.velocity_of(state)
        return self._dissipation_hat([self.grid.fft(ui) for ui in u])

    # -- step size ---------------------------------------------------------

    def stable_dt(self, state: ScaledState, control: StepControl) -> float:
        g, p = self.grid, self.params
        u = self.velocity_of(state)
        speed = float(np.sqrt(np.max(np.sum(u * u, axis=0))))
        rho = state.rho
        c_max = float(np.sqrt(np.max(p.gamma * rho ** (p.gamma - 1.0)) / p.epsilon))
        acoustic = g.h / (speed + c_max)
        viscous = p.epsilon * float(rho.min()) * g.h**2 / (4.0 * p.bulk)
        return min(control.cfl * min(acoustic, viscous), control.dt_max)

    # -- stepping ----------------------------------------------------------

    def _set_reference(self, state: ScaledState) -> None:
        p = self.params
        rho_ref = float(np.max(np.abs(state.rho)))
        c0 = float(np.sqrt(p.gamma * rho_ref ** (p.gamma - 1.0) / p.epsilon))
        u_ref = float(np.max(np.abs(state.mom))) / max(float(state.rho.min()), self.rho_floor)
        self._ref_norms = (rho_ref, rho_ref * max(u_ref, c0))

    def _check_blowup(self, rho, mom) -> None:
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(mom))):
            raise BlowUp("non-finite values in scaled state")
        rho_ref, mom_ref = self._ref_norms
        if np.max(np.abs(rho)) > BLOWUP_FACTOR * rho_ref or np.max(np.abs(mom)) > BLOWUP_FACTOR * mom_ref:
            raise BlowUp("scaled state exceeded 1e6 times its reference norm")

    def _apply_floor(self, rho: np.ndarray) -> np.ndarray:
        low = rho < self.rho_floor
        if not low.any():
            return rho
        self.floor_activations += 1
        logger.warning("density floor activated in %d cells", int(low.sum()))
        deficit = float(np.sum(self.rho_floor - rho[low]))
        rho = rho.copy()
        rho[low] = self.rho_floor
        excess = np.where(~low, rho - self.rho_floor, 0.0)
        total = float(excess.sum())
        if total <= deficit:
            raise FloorViolation("not enough mass above the floor to redistribute")
        return rho - excess * (deficit / total)

    def _step(self, state: ScaledState, dt: float) -> tuple[ScaledState, float]:
        if self._ref_norms is None:
            self._set_reference(state)
        rho0, mom0 = state.rho, state.mom
        rho, mom = rho0, mom0
        diss = 0.0
        for (a, b), w in zip(SSPRK3_STAGES, SSPRK3_WEIGHTS):
            drho, dmom, uh = self._rhs_hat(rho, mom)
            diss += w * self._dissipation_hat(uh)
            rho = a * rho0 + b * (rho + dt * drho) if a else rho + dt * drho
            mom = a * mom0 + b * (mom + dt * dmom) if a else mom + dt * dmom
        rho = self._apply_floor(rho)
        self._check_blowup(rho, mom)
        return ScaledState(rho, mom, state.t + dt), dt * diss

    def step(self, state: ScaledState, dt: float) -> ScaledState:
        """One SSP-RK3 step; negative ``dt`` integrates backwards."""
        return self._step(state, dt)[0]

    # -- driver ------------------------------------------------------------

    def run(self, init: ScaledState, control: StepControl, store_fields: bool = True) -> RunRecord:
        """Integrate to ``control.t_end``, recording budgets at every checkpoint.

        The energy residual is ``r(t) = E(t) + D_cum(t) - E(0)`` with
        ``E = kinetic_scaled + internal`` and the cumulative dissipation
        integrated with the Runge-Kutta stage weights.
        """
        g, p = self.grid, self.params
        self._set_reference(init)
        self.floor_activations = 0
        rec = RunRecord("scaled", g.dim, g.n, p.to_dict(), control.to_dict())
        state, dcum = init, 0.0
        e0 = self._record(rec, state, dcum, None, store_fields)
        nsteps = 0
        for target in control.targets():
            reached = False
            while not reached:
                dt, reached = clip_to_target(state.t, self.stable_dt(state, control), target)
                state, ddiss = self._step(state, dt)
                dcum += ddiss
                nsteps += 1
                if reached:
                    state = ScaledState(state.rho, state.mom, target)
                if reached or control.record_every_step:
                    self._record(rec, state, dcum, e0, store_fields)
        rec.diagnostics.update(steps=nsteps, floor_activations=self.floor_activations,
                               mass_drift=abs(g.integrate(state.rho) - g.integrate(init.rho))
                               / g.integrate(init.rho))
        return rec

    def _record(self, rec, state, dcum, e0, store_fields) -> float:
        g, p = self.grid, self.params
        u = self.velocity_of(state)
        b = EnergyBudget(state.t, kinetic_energy_scaled(g, state.rho, u, p.epsilon),
                         internal_energy(g, state.rho, p.gamma), dcum)
        e0 = b.energy if e0 is None else e0
        rec.budgets.append(b)
        rec.residuals.append(b.total - e0)
        if store_fields:
            rec.fields[state.t] = {"rho": state.rho.copy(), "mom": state.mom.copy()}
        return e0


def _rfft_weights(grid: TorusGrid) -> np.ndarray:
    """Multiplicity of each half-spectrum coefficient in a full-spectrum sum."""
    last = grid.k[-1]
    w = np.where((last == 0) | (last == grid.n // 2), 1.0, 2.0)
    return np.broadcast_to(w, grid.spectral_shape)


def run_scaled(grid: TorusGrid, init: ScaledState, params: FluidParams, control: StepControl,
               store_fields: bool = True) -> RunRecord:
    return ScaledSolver(grid, params).run(init, control, store_fields=store_fields)
