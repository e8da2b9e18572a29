"""Epsilon sweeps of the scaled solver against one shared limit-system reference.

A sweep runs the limit solver once, then the scaled solver for each epsilon on
the same grid and checkpoint times, and compares them through

* ``K(eps, t) = eps * int rho_eps |u_eps|^2`` (scaled kinetic energy), and
* ``G(eps, t) = || rho_eps(t) - rho_lim(t) ||_L1`` (density gap).

Rates are fitted by least squares on log-log axes. The slope windows used by
the certificate are regression baselines, not theoretical rates.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IllPreparedData, InertiaLabError, InvalidParameters, NonPositiveValue
from .field import TorusGrid
from .limit_solver import LimitSolver, LimitState, velocity_from_density
from .model import FluidParams, internal_energy, well_preparedness
from .records import RunRecord, atomic_write_text, content_hash, csv_text
from .scaled_solver import ScaledSolver, ScaledState
from .stepping import StepControl

logger = logging.getLogger(__name__)

PROFILES = ("constant", "cosine_bump", "gaussian_blob")
VELOCITY_MODES = ("zero_velocity", "slaved_velocity", "ill_prepared")
#: Smallest initial density accepted for certified sweeps.
CERTIFIED_RHO_MIN = 0.3


@dataclass(frozen=True)
class InitialData:
    """Named analytic density profile.

    Attributes:
        profile: ``constant`` (rho = a), ``cosine_bump`` (rho = a + b prod cos x_i)
            or ``gaussian_blob`` (rho = a + b * periodized Gaussian of the given
            ``width`` centred at ``center``).
        a: background level.
        b: bump amplitude.
        width: Gaussian width, only used by ``gaussian_blob``.
        center: Gaussian centre per axis; defaults to pi on every axis.
    """

    profile: str = "cosine_bump"
    a: float = 1.0
    b: float = 0.3
    width: float = 0.5
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise InvalidParameters(f"unknown profile {self.profile!r}; choose from {PROFILES}")
        if self.profile == "gaussian_blob" and not self.width > 0:
            raise InvalidParameters("gaussian_blob needs width > 0")
        if self.center is not None:
            object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def density(self, grid: TorusGrid) -> np.ndarray:
        x = grid.coordinates()
        if self.profile == "constant":
            return np.full(grid.shape, float(self.a))
        if self.profile == "cosine_bump":
            return self.a + self.b * np.prod([np.cos(xi) for xi in x], axis=0)
        center = self.center or (math.pi,) * grid.dim
        if len(center) != grid.dim:
            raise InvalidParameters("gaussian_blob center must have one entry per axis")
        blob = np.zeros(grid.shape)
        # sum over neighbouring periodic images; the far images are negligible
        for shift in np.ndindex(*([3] * grid.dim)):
            r2 = sum((xi - c + 2 * math.pi * (s - 1)) ** 2 for xi, c, s in zip(x, center, shift))
            blob += np.exp(-r2 / (2 * self.width**2))
        return self.a + self.b * blob


def initial_velocity(grid: TorusGrid, rho0: np.ndarray, params: FluidParams, mode: str,
                     epsilon: float) -> np.ndarray:
    """Initial velocity for a well-preparedness mode.

    ``ill_prepared`` returns the constant field ``eps^(-1/2) e_1``, whose scaled
    kinetic energy does not vanish with epsilon.
    """
    if mode == "zero_velocity":
        return grid.zeros_vector()
    if mode == "slaved_velocity":
        return velocity_from_density(grid, rho0, params)
    if mode == "ill_prepared":
        u = grid.zeros_vector()
        u[0] = epsilon**-0.5
        return u
    raise InvalidParameters(f"unknown velocity mode {mode!r}; choose from {VELOCITY_MODES}")


@dataclass(frozen=True)
class SweepConfig:
    """Everything an epsilon sweep needs; ``params.epsilon`` is ignored."""

    epsilons: tuple[float, ...]
    dim: int
    n: int
    params: FluidParams
    control: StepControl
    initial: InitialData = field(default_factory=InitialData)
    well_prepared_mode: str = "zero_velocity"
    certified: bool = True
    limit_refine: int = 1
    limit_dt_max: float | None = None

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        object.__setattr__(self, "epsilons", eps)
        if not eps:
            raise InvalidParameters("a sweep needs at least one epsilon")
        if any(e <= 0 for e in eps):
            raise InvalidParameters("all epsilons must be > 0")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise InvalidParameters("epsilons must be strictly decreasing")
        if self.well_prepared_mode not in VELOCITY_MODES:
            raise InvalidParameters(f"unknown well_prepared_mode {self.well_prepared_mode!r}")
        if int(self.limit_refine) != self.limit_refine or self.limit_refine < 1:
            raise InvalidParameters("limit_refine must be a positive integer")
        self.params.validate(self.dim)

    @property
    def grid(self) -> TorusGrid:
        return TorusGrid(self.dim, self.n)

    @property
    def checkpoints(self) -> list[float]:
        return self.control.targets()

    def to_dict(self) -> dict:
        return {"epsilons": list(self.epsilons), "dim": self.dim, "n": self.n,
                "params": self.params.to_dict(), "control": self.control.to_dict(),
                "initial": asdict(self.initial), "well_prepared_mode": self.well_prepared_mode,
                "certified": self.certified, "limit_refine": self.limit_refine,
                "limit_dt_max": self.limit_dt_max}


@dataclass
class GateResult:
    passed: bool
    values: list[float]
    reason: str = ""


def check_well_prepared(config: SweepConfig, raise_on_fail: bool = False) -> GateResult:
    """Initial scaled kinetic energy ``eps int rho0 |u0|^2`` must vanish along the sweep.

    Passes iff the values are non-increasing in the sweep order and the last is
    at most 1% of the first (all zero counts as a pass).

    Raises:
        IllPreparedData: if ``raise_on_fail`` and the gate fails.
    """
    grid = config.grid
    rho0 = config.initial.density(grid)
    values = []
    for eps in config.epsilons:
        u0 = initial_velocity(grid, rho0, config.params, config.well_prepared_mode, eps)
        values.append(well_preparedness(grid, rho0, u0, eps))
    decreasing = all(b <= a for a, b in zip(values, values[1:]))
    small = values[-1] <= 0.01 * values[0]
    passed = decreasing and small
    reason = ""
    if not decreasing:
        reason = "initial scaled kinetic energy is not decreasing in epsilon"
    elif not small:
        reason = "initial scaled kinetic energy does not drop below 1% of its largest value"
    result = GateResult(passed, values, reason)
    if raise_on_fail and not passed:
        raise IllPreparedData(f"{reason}: {values}")
    return result


def convergence_rate(points: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Least-squares slope of ``log(value)`` against ``log(eps)`` and its standard error.

    Raises:
        InvalidParameters: with fewer than three points.
        NonPositiveValue: if any epsilon or value is not positive.
    """
    if len(points) < 3:
        raise InvalidParameters("a rate fit needs at least 3 points")
    x = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise NonPositiveValue("log-log fit needs strictly positive epsilons and values")
    lx, ly = np.log(x), np.log(y)
    design = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(design, ly, rcond=None)
    resid = ly - design @ coef
    dof = len(x) - 2
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    stderr = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 and sxx > 0 else 0.0
    return float(coef[0]), stderr


# -- sweep -------------------------------------------------------------------


@dataclass
class EpsilonEntry:
    """Per-epsilon metrics at the shared checkpoints."""

    epsilon: float
    well_preparedness: float
    times: list[float] = field(default_factory=list)
    kinetic: list[float] = field(default_factory=list)
    l1_gap: list[float] = field(default_factory=list)
    energy_residual: list[float] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    failure: str | None = None


@dataclass
class SweepRecord:
    config: SweepConfig
    entries: list[EpsilonEntry]
    limit_diagnostics: dict
    internal0: float
    fits: list[dict] = field(default_factory=list)
    integrability: list[dict] = field(default_factory=list)

    def entry(self, epsilon: float) -> EpsilonEntry:
        for e in self.entries:
            if math.isclose(e.epsilon, epsilon, rel_tol=1e-12):
                return e
        raise KeyError(epsilon)

    def series(self, metric: str, t: float) -> list[tuple[float, float]]:
        """``(epsilon, value)`` pairs of ``kinetic`` or ``l1_gap`` at checkpoint ``t``."""
        out = []
        for e in self.entries:
            if e.failure is None:
                idx = _time_index(e.times, t)
                out.append((e.epsilon, getattr(e, metric)[idx]))
        return out

    def to_dict(self) -> dict:
        cfg = self.config.to_dict()
        return {"config": cfg, "inputs_hash": content_hash(cfg), "internal0": self.internal0,
                "limit_diagnostics": self.limit_diagnostics,
                "entries": [asdict(e) for e in self.entries], "fits": self.fits,
                "integrability": self.integrability,
                "note": "rates are whole-sequence fits; subsequential behaviour is not resolved"}

    def metrics_csv(self) -> str:
        rows = []
        for e in self.entries:
            for t, k, g, r in zip(e.times, e.kinetic, e.l1_gap, e.energy_residual):
                rows.append([e.epsilon, t, k, g, r])
        return csv_text(["epsilon", "t", "kinetic_scaled", "l1_gap", "energy_residual"], rows)

    def fits_csv(self) -> str:
        rows = [[f["metric"], f["t"], f["slope"], f["stderr"], f["points"]] for f in self.fits]
        return csv_text(["metric", "t", "slope", "stderr", "points"], rows)

    def save(self, out_dir: str | Path, plots: bool = False) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "metrics.csv", self.metrics_csv())
        atomic_write_text(out / "fits.csv", self.fits_csv())
        if plots:
            write_plots(self, out)
        atomic_write_text(out / "sweep.json", json.dumps(self.to_dict(), indent=2))
        return out


def _time_index(times: Sequence[float], t: float) -> int:
    for i, s in enumerate(times):
        if abs(s - t) <= 1e-12 * max(1.0, abs(t)):
            return i
    raise KeyError(f"no checkpoint at t={t}")


def _limit_reference(config: SweepConfig) -> tuple[RunRecord, dict]:
    """Run the limit system once and sample it at the sweep grid nodes.

    With ``limit_refine = r`` the reference is computed on the grid with ``r * n``
    points per axis, which contains every sweep node, and then sampled by
    taking every ``r``-th point. No interpolation is involved.
    """
    r = int(config.limit_refine)
    grid = TorusGrid(config.dim, config.n * r)
    control = config.control
    if config.limit_dt_max is not None:
        control = replace(control, dt_max=min(control.dt_max, config.limit_dt_max))
    solver = LimitSolver(grid, config.params.with_epsilon(0.0), audit=False)
    rec = solver.run(LimitState(config.initial.density(grid)), control)
    take = (slice(None, None, r),) * config.dim
    return rec, {t: rec.field_at(t, "rho")[take] for t in config.checkpoints}


def _scaled_entry(config: SweepConfig, epsilon: float, limit_fields: dict) -> EpsilonEntry:
    """Run one scaled simulation and compare it to the limit checkpoints."""
    grid = config.grid
    params = config.params.with_epsilon(epsilon)
    rho0 = config.initial.density(grid)
    u0 = initial_velocity(grid, rho0, params, config.well_prepared_mode, epsilon)
    entry = EpsilonEntry(epsilon, well_preparedness(grid, rho0, u0, epsilon))
    try:
        solver = ScaledSolver(grid, params)
        rec = solver.run(ScaledState(rho0, rho0 * u0), config.control)
    except InertiaLabError as exc:
        entry.failure = f"{type(exc).__name__}: {exc}"
        return entry
    for t in config.checkpoints:
        rho = rec.field_at(t, "rho")
        mom = rec.field_at(t, "mom")
        entry.times.append(t)
        entry.kinetic.append(epsilon * grid.integrate(np.sum(mom * mom, axis=0) / rho))
        entry.l1_gap.append(grid.integrate(np.abs(rho - limit_fields[t])))
        entry.energy_residual.append(rec.residuals[rec.times.index(rec.budget_at(t).time)])
    entry.diagnostics = dict(rec.diagnostics)
    entry.diagnostics["integrability_series"] = _integrability_series(rec, params.gamma)
    return entry


def _integrability_series(rec: RunRecord, gamma: float) -> dict:
    from .analysis import IntegrabilityProbe

    theta = IntegrabilityProbe.for_gamma(gamma).theta if gamma > 1.5 else 0.0
    grid = TorusGrid(rec.grid_dim, rec.grid_n)
    times = sorted(rec.fields)
    return {"theta": theta, "times": times,
            "values": [grid.integrate(rec.fields[t]["rho"] ** (gamma + theta)) for t in times]}


def default_workers(count: int) -> int:
    return max(1, min(os.cpu_count() or 1, count))


def epsilon_sweep(config: SweepConfig, workers: int | None = None) -> SweepRecord:
    """Run the sweep; failed epsilon runs are kept with a ``failure`` marker.

    Raises:
        IllPreparedData: if the well-preparedness gate fails in certified mode.
    """
    gate = check_well_prepared(config)
    if not gate.passed and config.certified:
        raise IllPreparedData(f"{gate.reason}: {gate.values}")
    grid = config.grid
    if config.certified and float(config.initial.density(grid).min()) < CERTIFIED_RHO_MIN:
        raise InvalidParameters(f"certified sweeps need rho0 >= {CERTIFIED_RHO_MIN}")
    limit, limit_fields = _limit_reference(config)
    workers = workers or default_workers(len(config.epsilons))
    if workers <= 1:
        entries = [_scaled_entry(config, eps, limit_fields) for eps in config.epsilons]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_scaled_entry, config, eps, limit_fields) for eps in config.epsilons]
            entries = [f.result() for f in futures]
    for e in entries:
        if e.failure:
            logger.warning("epsilon=%g failed: %s", e.epsilon, e.failure)
    record = SweepRecord(config, entries, dict(limit.diagnostics),
                         internal_energy(grid, config.initial.density(grid), config.params.gamma))
    record.fits = _fits(record)
    record.integrability = _integrability_table(record)
    return record


def _fits(record: SweepRecord) -> list[dict]:
    fits = []
    for metric in ("kinetic", "l1_gap"):
        for t in record.config.checkpoints:
            pts = record.series(metric, t)
            if len(pts) < 3:
                continue
            try:
                slope, err = convergence_rate(pts)
            except NonPositiveValue:
                continue
            fits.append({"metric": metric, "t": t, "slope": slope, "stderr": err, "points": len(pts)})
    return fits


def _integrability_table(record: SweepRecord) -> list[dict]:
    rows = []
    for e in record.entries:
        series = e.diagnostics.get("integrability_series")
        if not series:
            continue
        value = float(np.trapezoid(series["values"], series["times"]))
        rows.append({"label": e.epsilon, "theta": series["theta"], "value": value,
                     "t_end": series["times"][-1]})
    return rows


# -- certificates ------------------------------------------------------------


@dataclass
class Certificate:
    name: str
    passed: bool
    values: dict

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}"


def kinetic_decay_certificate(record: SweepRecord, t_star: float) -> Certificate:
    """K(eps, t_star) decreases as eps decreases and ends at or below 1% of internal(0)."""
    pts = record.series("kinetic", t_star)
    ks = [k for _, k in pts]
    decreasing = all(b <= a for a, b in zip(ks, ks[1:]))
    small = bool(ks) and ks[-1] <= 1e-2 * record.internal0
    complete = len(pts) == len(record.entries)
    return Certificate(f"kinetic decay at t={t_star:g}", decreasing and small and complete,
                       {"epsilons": [e for e, _ in pts], "kinetic": ks,
                        "internal0": record.internal0})


def write_plots(record: SweepRecord, out: Path) -> list[Path]:
    """Static SVG plots of K and G against epsilon at every checkpoint."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for metric, label in (("kinetic", "scaled kinetic energy K"), ("l1_gap", "L1 density gap G")):
        fig, ax = plt.subplots(figsize=(5, 4))
        for t in record.config.checkpoints:
            pts = [(e, v) for e, v in record.series(metric, t) if v > 0]
            if pts:
                ax.loglog(*zip(*pts), marker="o", label=f"t = {t:g}")
        ax.set_xlabel("epsilon")
        ax.set_ylabel(label)
        ax.legend()
        path = out / f"{metric}_vs_epsilon.svg"
        tmp = out / f".{path.name}.tmp"
        fig.savefig(tmp, format="svg")
        plt.close(fig)
        os.replace(tmp, path)
        paths.append(path)
    return paths
