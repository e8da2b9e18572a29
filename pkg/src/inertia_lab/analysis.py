"""Diagnostics for pressure bounds, commutators and renormalized transport.

* ``bogovskii``: right inverse of the divergence on mean-free data, ``grad Lap^{-1}``.
* ``pressure_identity_check``: the four-term identity obtained by testing the
  elliptic relation with ``S_m B[S_m rho^gamma]``.
* ``friedrichs_commutator``: L1 size of the mollifier/product commutators.
* ``renormalization_residual``: space-time weak residual of the renormalized
  continuity equation over a trajectory.
* ``higher_integrability``: time-integrated ``rho^(gamma + theta)`` per run.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import InsufficientCheckpoints, InvalidParameters
from .field import TorusGrid
from .limit_solver import fourier_scalar_bank, velocity_from_density
from .model import FluidParams, clamp_density, pressure
from .records import RunRecord, canonical_json, content_hash

MIN_INSTANTS = 8


def bogovskii(grid: TorusGrid, f: np.ndarray) -> np.ndarray:
    """``grad Lap^{-1} (f - mean f)``; its divergence is ``f - mean f``."""
    return grid.gradient(grid.inverse_laplacian(f))


# -- pressure-bound identity -------------------------------------------------


@dataclass(frozen=True)
class PressureIdentity:
    lhs: float
    i1: float
    i2: float
    i3: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.i1 - self.i2 - self.i3)

    @property
    def relative_residual(self) -> float:
        return self.residual / max(abs(self.lhs), 1e-300)


def pressure_identity_check(grid: TorusGrid, rho: np.ndarray, u: np.ndarray,
                            params: FluidParams, m: float) -> PressureIdentity:
    """Split ``int |S_m p|^2`` into mean coupling, shear and bulk terms.

    With ``P = S_m rho^gamma`` and ``G = P - mean P``:
    ``I1 = int P mean(P)``,
    ``I2 = nu sum_ij int d_i S_m u_j  d_i d_j Lap^{-1} G``,
    ``I3 = (nu + lambda) int div S_m u  G``.
    When ``u`` is slaved to ``rho`` the four terms satisfy ``lhs = I1 + I2 + I3``.
    """
    big_p = grid.mollify(pressure(rho, params.gamma), m)
    pbar = grid.mean(big_p)
    g = big_p - pbar
    su = grid.mollify(u, m)
    grad_su = grid.grad_tensor(su)
    hess = grid.grad_tensor(bogovskii(grid, g))
    lhs = grid.integrate(big_p * big_p)
    i1 = grid.integrate(big_p * pbar)
    i2 = params.nu * grid.inner(grad_su, hess)
    i3 = (params.nu + params.lambda_) * grid.integrate(np.trace(grad_su, axis1=0, axis2=1) * g)
    return PressureIdentity(lhs, i1, i2, i3)


# -- Friedrichs commutator ---------------------------------------------------


@dataclass(frozen=True)
class Commutator:
    """L1 norms of ``A_m = S_m f (div S_m u - div u)`` and ``B_m = S_m f div u - S_m(f div u)``.

    ``total`` is ``||A_m + B_m||_1``, i.e. ``||R_m||_1 / (gamma - 1)`` when ``f = rho^gamma``.
    """

    a_part: float
    b_part: float
    total: float


def friedrichs_commutator(grid: TorusGrid, f: np.ndarray, u: np.ndarray, m: float) -> Commutator:
    sf = grid.mollify(f, m)
    div_u = grid.divergence(u)
    div_su = grid.mollify(div_u, m)
    a = sf * (div_su - div_u)
    b = sf * div_u - grid.mollify(f * div_u, m)
    return Commutator(grid.lp_norm(a, 1), grid.lp_norm(b, 1), grid.lp_norm(a + b, 1))


# -- renormalized continuity -------------------------------------------------


@dataclass(frozen=True)
class RenormalizerB:
    """``b(z) = z^power`` for ``z <= M - delta``, flattened to a constant beyond ``M``.

    On ``[M - delta, M]`` the derivative is blended as ``b'(z0) (1 - s)^2`` with
    ``s = (z - z0) / delta``, so ``b`` is C1 and ``b' = 0`` for ``z >= M``.
    """

    cutoff: float
    power: float = 1.0
    delta: float | None = None

    def __post_init__(self):
        if not self.cutoff > 0:
            raise InvalidParameters(f"cutoff must be > 0, got {self.cutoff}")
        if self.delta is None:
            object.__setattr__(self, "delta", self.cutoff / 10.0)

    @property
    def _z0(self) -> float:
        return self.cutoff - self.delta

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        z0, d, p = self._z0, self.delta, self.power
        a0, a1 = z0**p, p * z0 ** (p - 1.0)
        s = np.clip((z - z0) / d, 0.0, 1.0)
        blend = a0 + a1 * d * (1.0 - (1.0 - s) ** 3) / 3.0
        return np.where(z <= z0, np.maximum(z, 0.0) ** p, blend)

    def derivative(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        z0, d, p = self._z0, self.delta, self.power
        a1 = p * z0 ** (p - 1.0)
        s = np.clip((z - z0) / d, 0.0, 1.0)
        inner = p * np.maximum(z, 0.0) ** (p - 1.0) if p != 1 else np.ones_like(z)
        blend = np.where(z >= self.cutoff, 0.0, a1 * (1.0 - s) ** 2)
        return np.where(z <= z0, inner, blend)


@dataclass
class Trajectory:
    """Density and velocity snapshots at increasing times on one grid."""

    grid: TorusGrid
    times: np.ndarray
    rho: list[np.ndarray]
    u: list[np.ndarray]

    @classmethod
    def from_record(cls, rec: RunRecord, params: FluidParams | None = None) -> "Trajectory":
        """Velocities are re-slaved for limit runs and ``m / rho`` for scaled runs."""
        grid = TorusGrid(rec.grid_dim, rec.grid_n)
        times = sorted(rec.fields)
        rhos = [rec.fields[t]["rho"] for t in times]
        if rec.kind == "limit":
            params = params or FluidParams(**rec.params)
            us = [velocity_from_density(grid, r, params) for r in rhos]
        else:
            us = [rec.fields[t]["mom"] / rec.fields[t]["rho"] for t in times]
        return cls(grid, np.asarray(times, dtype=float), rhos, us)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])


def smoothstep5(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def smoothstep5_prime(s: np.ndarray) -> np.ndarray:
    inside = (s > 0) & (s < 1)
    return np.where(inside, 30.0 * s**2 * (1.0 - s) ** 2, 0.0)


@dataclass(frozen=True)
class TimeWindow:
    """Plateau window rising on ``[start, start + ramp]`` and falling on ``[stop - ramp, stop]``."""

    start: float
    stop: float
    ramp: float

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return smoothstep5((t - self.start) / self.ramp) * smoothstep5((self.stop - t) / self.ramp)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Instants where the window changes polynomial piece."""
        return (self.start, self.start + self.ramp, self.stop - self.ramp, self.stop)

    def derivative(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        up, down = (t - self.start) / self.ramp, (self.stop - t) / self.ramp
        return (smoothstep5_prime(up) * smoothstep5(down)
                - smoothstep5(up) * smoothstep5_prime(down)) / self.ramp


@dataclass
class SpaceTimeBank:
    spatial: list[np.ndarray]
    windows: list[TimeWindow]

    @classmethod
    def default(cls, grid: TorusGrid, t0: float, t1: float, kmax: int = 2) -> "SpaceTimeBank":
        span = t1 - t0
        windows = [
            TimeWindow(t0, t1, 0.25 * span),
            TimeWindow(t0, t0 + 0.6 * span, 0.2 * span),
            TimeWindow(t0 + 0.4 * span, t1, 0.2 * span),
        ]
        return cls(fourier_scalar_bank(grid, kmax), windows)


def _trapezoid(values: np.ndarray, times: np.ndarray) -> float:
    return float(np.trapezoid(values, times))


_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(8)


def product_trapezoid_weights(weight: Callable, times: np.ndarray,
                              breakpoints: Sequence[float] = ()) -> np.ndarray:
    """Quadrature weights ``c_i`` with ``sum c_i F(t_i) = int weight(t) F_lin(t) dt``.

    ``F_lin`` is the piecewise-linear interpolant of the samples (the trapezoid
    model of the data); the known ``weight`` is integrated against it by
    8-point Gauss-Legendre on every interval, split at ``breakpoints`` so that
    piecewise-polynomial weights of degree up to 14 are integrated exactly.
    With ``weight = 1`` this is the trapezoid rule.
    """
    times = np.asarray(times, dtype=float)
    coeff = np.zeros(len(times))
    for i in range(len(times) - 1):
        lo, hi = times[i], times[i + 1]
        cuts = [lo] + sorted(b for b in breakpoints if lo < b < hi) + [hi]
        for a, b in zip(cuts[:-1], cuts[1:]):
            half = 0.5 * (b - a)
            t = 0.5 * (a + b) + half * _GAUSS_NODES
            w = weight(t) * _GAUSS_WEIGHTS * half
            frac = (t - lo) / (hi - lo)
            coeff[i] += np.sum(w * (1.0 - frac))
            coeff[i + 1] += np.sum(w * frac)
    return coeff


def _weak_residual(traj: Trajectory, density_term: Callable, flux_term: Callable,
                   source_term: Callable | None, bank: SpaceTimeBank) -> float:
    g = traj.grid
    if len(traj.times) < MIN_INSTANTS:
        raise InsufficientCheckpoints(
            f"need at least {MIN_INSTANTS} trajectory instants, got {len(traj.times)}")
    # per instant: pairings with each test mode, plus Cauchy-Schwarz sizes of the terms
    grads = [g.gradient(phi) for phi in bank.spatial]
    phi_norm = np.array([g.lp_norm(phi, 2) for phi in bank.spatial])
    grad_norm = np.array([np.sqrt(g.inner(gp, gp)) for gp in grads])
    pair = np.zeros((3, len(traj.times), len(bank.spatial)))
    size = np.zeros((3, len(traj.times), len(bank.spatial)))
    for i, (rho, u) in enumerate(zip(traj.rho, traj.u)):
        b = density_term(rho)
        bu = flux_term(rho)[None] * u
        s = source_term(rho) * g.divergence(u) if source_term is not None else np.zeros_like(rho)
        pair[0, i] = [g.integrate(b * phi) for phi in bank.spatial]
        pair[1, i] = [g.inner(bu, gp) for gp in grads]
        pair[2, i] = [-g.integrate(s * phi) for phi in bank.spatial]
        size[0, i] = g.lp_norm(b, 2) * phi_norm
        size[1, i] = np.sqrt(g.inner(bu, bu)) * grad_norm
        size[2, i] = g.lp_norm(s, 2) * phi_norm
    worst = 0.0
    for w in bank.windows:
        ts = traj.times
        bp = w.breakpoints
        signed = (product_trapezoid_weights(w.derivative, ts, bp), product_trapezoid_weights(w, ts, bp))
        unsigned = (product_trapezoid_weights(lambda t: np.abs(w.derivative(t)), ts, bp), signed[1])
        residual = signed[0] @ pair[0] + signed[1] @ (pair[1] + pair[2])
        scale = unsigned[0] @ size[0] + unsigned[1] @ (size[1] + size[2])
        ratio = np.divide(np.abs(residual), scale, out=np.zeros_like(scale), where=scale > 0)
        worst = max(worst, float(ratio.max()))
    return worst


def renormalization_residual(traj: Trajectory, b: RenormalizerB,
                             bank: SpaceTimeBank | None = None) -> float:
    """Worst normalized weak residual of ``d_t b + div(b u) + (b' rho - b) div u = 0``.

    Each test function ``chi(t) phi(x)`` gives
    ``R = int int [b chi' phi + chi b u . grad phi - chi (b' rho - b) div u phi]``,
    integrated in time over the trajectory instants with the product trapezoid
    rule (``product_trapezoid_weights``) and
    divided by the time integral of the Cauchy-Schwarz bounds of the three terms
    (``|chi'| ||b|| ||phi|| + chi ||b u|| ||grad phi|| + chi ||(b' rho - b) div u|| ||phi||``).
    """
    bank = bank or SpaceTimeBank.default(traj.grid, traj.times[0], traj.times[-1])
    return _weak_residual(traj, b, b, lambda r: b.derivative(r) * r - b(r), bank)


def continuity_residual(traj: Trajectory, bank: SpaceTimeBank | None = None) -> float:
    """Plain weak continuity residual ``int int rho chi' phi + chi rho u . grad phi``."""
    bank = bank or SpaceTimeBank.default(traj.grid, traj.times[0], traj.times[-1])
    return _weak_residual(traj, lambda r: r, lambda r: r, None, bank)


# -- higher integrability ----------------------------------------------------


@dataclass(frozen=True)
class IntegrabilityProbe:
    """Extra exponent; defaults to ``2 gamma / 3 - 1``."""

    theta: float

    @classmethod
    def for_gamma(cls, gamma: float) -> "IntegrabilityProbe":
        theta = 2.0 * gamma / 3.0 - 1.0
        if theta <= 0:
            raise InvalidParameters(f"default theta = 2*gamma/3 - 1 is not positive for gamma={gamma}")
        return cls(theta)

    def __post_init__(self):
        if self.theta < 0:
            raise InvalidParameters(f"theta must be >= 0, got {self.theta}")


def higher_integrability(records: Sequence[RunRecord], probe: IntegrabilityProbe | None = None,
                         labels: Sequence[Any] | None = None) -> list[dict]:
    """``int_0^T int rho^(gamma + theta)`` per run, trapezoid over stored instants."""
    if not records:
        return []
    first = records[0]
    gamma = first.params["gamma"]
    probe = probe or IntegrabilityProbe.for_gamma(gamma)
    rows = []
    for idx, rec in enumerate(records):
        if (rec.grid_dim, rec.grid_n) != (first.grid_dim, first.grid_n) or rec.params["gamma"] != gamma:
            raise InvalidParameters("all runs must share grid and gamma")
        grid = TorusGrid(rec.grid_dim, rec.grid_n)
        times = np.asarray(sorted(rec.fields), dtype=float)
        vals = np.asarray([grid.integrate(clamp_density(rec.fields[t]["rho"]) ** (gamma + probe.theta))
                           for t in times])
        label = labels[idx] if labels is not None else rec.params.get("epsilon")
        rows.append({"label": label, "theta": probe.theta, "value": _trapezoid(vals, times),
                     "t_end": float(times[-1])})
    return rows


# -- reports -----------------------------------------------------------------


@dataclass
class CheckReport:
    """JSON-ready outcome of one analysis check."""

    check: str
    values: dict
    passed: bool
    tolerance: float
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        inputs = d.pop("inputs")
        d["inputs_hash"] = content_hash(inputs)
        return json.loads(canonical_json(d))


# -- operator suite ----------------------------------------------------------


def m_ladder(start: int = 2, stop: int = 64) -> list[int]:
    """Doubling sequence ``start, 2 start, ...`` up to ``stop`` inclusive."""
    if not 0 < start <= stop:
        raise InvalidParameters(f"invalid m ladder {start}..{stop}")
    out = [start]
    while out[-1] * 2 <= stop:
        out.append(out[-1] * 2)
    return out


def verify_operators(grid: TorusGrid | None = None, ladder: Sequence[int] | None = None,
                     seed: int = 0) -> list[CheckReport]:
    """Run the operator property checks on random and closed-form inputs.

    Checks the divergence and L2-isometry properties of ``bogovskii``, the Lame
    forward/inverse round trip, mean preservation and L2 contraction of the
    mollifier over ``ladder``, and decay of the Friedrichs commutator for the
    pair ``f = cos x_1``, ``u = sin x_1 e_1``.
    """
    from .field import random_smooth_field

    grid = grid or TorusGrid(2, 64)
    ladder = list(ladder or m_ladder(2, 64))
    rng = np.random.default_rng(seed)
    inputs = {"dim": grid.dim, "n": grid.n, "seed": seed, "ladder": ladder}
    reports = []

    f = random_smooth_field(grid, rng) + 2.0
    fc = f - grid.mean(f)
    bf = bogovskii(grid, f)
    div_err = float(np.max(np.abs(grid.divergence(bf) - fc)) / np.max(np.abs(fc)))
    gb = grid.grad_tensor(bf)
    iso = abs(np.sqrt(grid.inner(gb, gb)) / np.sqrt(grid.inner(fc, fc)) - 1.0)
    reports.append(CheckReport("bogovskii_divergence", {"max_rel_error": div_err}, div_err <= 1e-12,
                               1e-12, inputs))
    reports.append(CheckReport("bogovskii_l2_isometry", {"rel_error": iso}, iso <= 1e-12, 1e-12, inputs))

    nu, lam = 0.7, 0.3
    u = random_smooth_field(grid, rng, ncomp=grid.dim)
    u -= u.mean(axis=tuple(range(1, grid.dim + 1)), keepdims=True)
    back = grid.lame_solve(grid.lame_apply(u, nu, lam), nu, lam)
    rt = float(np.max(np.abs(back - u)) / np.max(np.abs(u)))
    reports.append(CheckReport("lame_round_trip", {"max_rel_error": rt}, rt <= 1e-10, 1e-10, inputs))

    mean_errs, ratios = [], []
    for m in ladder:
        sf = grid.mollify(f, m)
        mean_errs.append(abs(grid.mean(sf) - grid.mean(f)) / abs(grid.mean(f)))
        ratios.append(float(np.sqrt(grid.inner(sf, sf) / grid.inner(f, f))))
    symbol_one = all(grid.mollifier_symbol(m).flat[0] == 1.0 for m in ladder)
    reports.append(CheckReport("mollifier_mean", {"symbol_at_zero_is_one": symbol_one,
                                                  "max_rel_mean_error": max(mean_errs)},
                               symbol_one and max(mean_errs) <= 1e-14, 1e-14, inputs))
    reports.append(CheckReport("mollifier_l2_contraction", {"m": ladder, "ratio": ratios},
                               all(r <= 1.0 + 1e-15 for r in ratios), 0.0, inputs))

    x = grid.coordinates()
    fx = np.cos(x[0])
    ux = grid.zeros_vector()
    ux[0] = np.sin(x[0])
    totals = [friedrichs_commutator(grid, fx, ux, m).total for m in ladder]
    decreasing = all(b < a for a, b in zip(totals, totals[1:]))
    final_ratio = totals[-1] / totals[0]
    reports.append(CheckReport("friedrichs_decay", {"m": ladder, "total": totals,
                                                    "final_over_initial": final_ratio},
                               decreasing and final_ratio <= 0.05, 0.05, inputs))
    return reports
