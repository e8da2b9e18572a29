"""Overdamped limit system: density transport with an elliptically slaved velocity.

At every Runge-Kutta stage the velocity is recomputed from the density by the
Lame inverse ``u = L^{-1} grad rho^gamma`` (zero-mean gauge). The density is
advanced by a conservative finite-volume scheme: MUSCL reconstruction with the
minmod limiter, upwind face fluxes, and face velocities obtained by exact
trigonometric interpolation of the spectral velocity to the half-grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlowUp
from .field import TorusGrid
from .model import EnergyBudget, FluidParams, clamp_density, dissipation_rate, internal_energy, pressure
from .records import RunRecord
from .scaled_solver import _rfft_weights
from .stepping import SSPRK3_STAGES, SSPRK3_WEIGHTS, StepControl, clip_to_target

#: Guards the transport CFL against division by zero when u vanishes.
DELTA_SAFETY = 1e-12


@dataclass(frozen=True)
class LimitState:
    rho: np.ndarray
    t: float = 0.0


def minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 0.5 * (np.sign(a) + np.sign(b)) * np.minimum(np.abs(a), np.abs(b))


def velocity_from_density(grid: TorusGrid, rho: np.ndarray, params: FluidParams) -> np.ndarray:
    """Zero-mean ``u`` solving ``nu Lap u + (nu + lambda) grad div u = grad rho^gamma``."""
    params.validate(grid.dim)
    return grid.lame_solve(grid.gradient(pressure(rho, params.gamma)), params.nu, params.lambda_)


def slaving_defect(grid: TorusGrid, rho: np.ndarray, u: np.ndarray, params: FluidParams) -> float:
    """Relative gap between ``integral rho^gamma div u`` and the dissipation rate."""
    flux = grid.integrate(pressure(rho, params.gamma) * grid.divergence(u))
    diss = dissipation_rate(grid, u, params.nu, params.lambda_)
    scale = max(abs(flux), abs(diss), 1e-300)
    return abs(flux - diss) / scale


def weak_momentum_residual(grid: TorusGrid, rho: np.ndarray, u: np.ndarray, params: FluidParams,
                           psi_bank: list[np.ndarray] | None = None) -> float:
    """Largest normalized defect of the weak elliptic relation over ``psi_bank``.

    For each test field ``psi`` evaluates
    ``|int p div psi - nu int grad u : grad psi - (nu + lambda) int div u div psi| / ||psi||_2``.
    Defaults to the bank of real Fourier modes with ``|k|_inf <= 2``.
    """
    if psi_bank is None:
        psi_bank = fourier_vector_bank(grid, 2)
    p = pressure(rho, params.gamma)
    gu = grid.grad_tensor(u)
    divu = np.trace(gu, axis1=0, axis2=1)
    worst = 0.0
    for psi in psi_bank:
        gpsi = grid.grad_tensor(psi)
        divpsi = np.trace(gpsi, axis1=0, axis2=1)
        r = (grid.integrate(p * divpsi) - params.nu * grid.inner(gu, gpsi)
             - (params.nu + params.lambda_) * grid.integrate(divu * divpsi))
        norm = np.sqrt(grid.inner(psi, psi))
        worst = max(worst, abs(r) / norm)
    return worst


def fourier_scalar_bank(grid: TorusGrid, kmax: int = 2) -> list[np.ndarray]:
    """Real modes ``cos(k.x)``, ``sin(k.x)`` for ``0 < |k|_inf <= kmax`` (one of each +-k pair) plus 1."""
    x = grid.coordinates()
    bank = [np.ones(grid.shape)]
    for k in _half_lattice(grid.dim, kmax):
        phase = sum(ki * xi for ki, xi in zip(k, x))
        bank.append(np.cos(phase))
        bank.append(np.sin(phase))
    return bank


def fourier_vector_bank(grid: TorusGrid, kmax: int = 2) -> list[np.ndarray]:
    out = []
    for s in fourier_scalar_bank(grid, kmax)[1:]:
        for comp in range(grid.dim):
            v = grid.zeros_vector()
            v[comp] = s
            out.append(v)
    return out


def _half_lattice(dim: int, kmax: int):
    rng = range(-kmax, kmax + 1)
    for k in np.ndindex(*([2 * kmax + 1] * dim)):
        kv = tuple(rng[i] for i in k)
        if any(kv) and kv > tuple(-c for c in kv):
            yield kv


class LimitSolver:
    """Hybrid finite-volume / spectral integrator for the limit system.

    Args:
        grid: periodic lattice.
        params: coefficients; ``epsilon`` is ignored.
        audit: if true, every velocity recomputation also checks the slaving
            identity ``int rho^gamma div u = dissipation rate`` and keeps the
            worst relative defect in ``max_slaving_defect``.
    """

    def __init__(self, grid: TorusGrid, params: FluidParams, audit: bool = True):
        params.validate(grid.dim)
        self.grid = grid
        self.params = params
        self.audit = audit
        self.max_slaving_defect = 0.0
        self.velocity_solves = 0
        self._weights = _rfft_weights(grid)
        self._shift = [np.exp(0.5j * ka * grid.h) for ka in grid.kd]
        self._mass0: float | None = None

    def velocity_from_density(self, rho: np.ndarray) -> np.ndarray:
        return velocity_from_density(self.grid, rho, self.params)

    def _velocity_hat(self, rho):
        g, p = self.grid, self.params
        ph = g.fft(pressure(rho, p.gamma))
        fh = [1j * ka * ph for ka in g.kd]
        return ph, g.lame_solve_hat(fh, p.nu, p.lambda_)

    def _dissipation(self, ph, uh) -> float:
        """``int rho^gamma div u`` via Parseval; equals the dissipation rate."""
        g = self.grid
        divh = sum(1j * ka * ua for ka, ua in zip(g.kd, uh))
        scale = g.volume / g.n ** (2 * g.dim)
        return float(scale * np.sum(self._weights * np.real(np.conj(ph) * divh)))

    def _rhs(self, rho):
        g = self.grid
        ph, uh = self._velocity_hat(rho)
        self.velocity_solves += 1
        diss = self._dissipation(ph, uh)
        if self.audit:
            u = np.stack([g.ifft(ua) for ua in uh])
            self.max_slaving_defect = max(self.max_slaving_defect,
                                          slaving_defect(g, rho, u, self.params))
        faces = [g.ifft(s * ua) for s, ua in zip(self._shift, uh)]
        drho = np.zeros_like(rho)
        for ax, uf in enumerate(faces):
            left = rho - np.roll(rho, 1, axis=ax)
            slope = minmod(left, np.roll(left, -1, axis=ax))
            rho_l = rho + 0.5 * slope
            rho_r = np.roll(rho - 0.5 * slope, -1, axis=ax)
            flux = np.maximum(uf, 0.0) * rho_l + np.minimum(uf, 0.0) * rho_r
            drho -= (flux - np.roll(flux, 1, axis=ax)) / g.h
        return drho, diss, faces

    def rhs(self, state: LimitState) -> np.ndarray:
        return self._rhs(state.rho)[0]

    def stable_dt(self, state: LimitState, control: StepControl) -> float:
        """Transport CFL plus the pressure-relaxation bound ``(2nu+lambda)/(gamma max rho^gamma)``."""
        g, p = self.grid, self.params
        _, uh = self._velocity_hat(state.rho)
        speed = sum(float(np.max(np.abs(g.ifft(s * ua)))) for s, ua in zip(self._shift, uh))
        transport = g.h / (speed + DELTA_SAFETY)
        relax = p.bulk / (p.gamma * float(np.max(pressure(state.rho, p.gamma))) + DELTA_SAFETY)
        return min(control.cfl * min(transport, relax), control.dt_max)

    def _step(self, state: LimitState, dt: float) -> tuple[LimitState, float]:
        rho0 = state.rho
        rho, diss = rho0, 0.0
        for (a, b), w in zip(SSPRK3_STAGES, SSPRK3_WEIGHTS):
            drho, d, _ = self._rhs(rho)
            diss += w * d
            rho = a * rho0 + b * (rho + dt * drho) if a else rho + dt * drho
        if not np.all(np.isfinite(rho)):
            raise BlowUp("non-finite density in limit run")
        if self._mass0 is not None and np.max(np.abs(rho)) > 1e6 * self._rho_ref:
            raise BlowUp("limit density exceeded 1e6 times its initial maximum")
        return LimitState(rho, state.t + dt), dt * diss

    def step(self, state: LimitState, dt: float) -> LimitState:
        if self._mass0 is None:
            self._start(state)
        return self._step(state, dt)[0]

    def _start(self, state: LimitState) -> None:
        self._mass0 = self.grid.integrate(state.rho)
        self._rho_ref = float(np.max(np.abs(state.rho)))

    def run(self, init: LimitState, control: StepControl, store_fields: bool = True) -> RunRecord:
        """Integrate to ``control.t_end`` recording ``q(t) = E_int(t) + D_cum(t) - E_int(0)``."""
        g, p = self.grid, self.params
        clamp_density(init.rho)
        self._start(init)
        self.max_slaving_defect = 0.0
        rec = RunRecord("limit", g.dim, g.n, p.to_dict(), control.to_dict())
        state, dcum = init, 0.0
        e0 = self._record(rec, state, dcum, None, store_fields)
        nsteps, rho_min = 0, float(init.rho.min())
        for target in control.targets():
            reached = False
            while not reached:
                dt, reached = clip_to_target(state.t, self.stable_dt(state, control), target)
                state, ddiss = self._step(state, dt)
                dcum += ddiss
                nsteps += 1
                rho_min = min(rho_min, float(state.rho.min()))
                if reached:
                    state = LimitState(state.rho, target)
                if reached or control.record_every_step:
                    self._record(rec, state, dcum, e0, store_fields)
        rec.diagnostics.update(
            steps=nsteps, rho_min=rho_min, velocity_solves=self.velocity_solves,
            max_slaving_defect=self.max_slaving_defect,
            mass_drift=abs(g.integrate(state.rho) - self._mass0) / self._mass0,
        )
        return rec

    def _record(self, rec, state, dcum, e0, store_fields) -> float:
        g, p = self.grid, self.params
        b = EnergyBudget(state.t, 0.0, internal_energy(g, state.rho, p.gamma), dcum)
        e0 = b.internal if e0 is None else e0
        rec.budgets.append(b)
        rec.residuals.append(b.total - e0)
        if store_fields:
            rec.fields[state.t] = {"rho": state.rho.copy()}
        return e0


def run_limit(grid: TorusGrid, init: LimitState, params: FluidParams, control: StepControl,
              store_fields: bool = True) -> RunRecord:
    return LimitSolver(grid, params).run(init, control, store_fields=store_fields)
