"""Command-line entry point ``inertia-lab``.

Subcommands: ``run-scaled``, ``run-limit``, ``sweep``, ``verify-operators`` and
``report``. Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 gate or certificate failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .analysis import m_ladder, verify_operators
from .errors import ConfigError, IllPreparedData, InertiaLabError
from .field import TorusGrid
from .harness import (PROFILES, VELOCITY_MODES, InitialData, SweepConfig, default_workers,
                      epsilon_sweep, initial_velocity, kinetic_decay_certificate)
from .limit_solver import LimitState, run_limit
from .model import FluidParams
from .scaled_solver import ScaledState, run_scaled
from .stepping import StepControl

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_GATE = 0, 1, 2, 3
OUT_ENV = "INERTIA_LAB_OUT"

_NUM = {"type": "number"}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "dim": {"type": "integer", "enum": [2, 3]},
        "n": {"type": "integer", "minimum": 8},
        "epsilon": _NUM, "nu": _NUM, "lambda": _NUM, "gamma": _NUM,
        "cfl": _NUM, "dt_max": _NUM, "t_end": _NUM,
        "checkpoint_times": {"type": "array", "items": _NUM},
        "record_every_step": {"type": "boolean"},
        "profile": {"type": "string", "enum": list(PROFILES)},
        "a": _NUM, "b": _NUM, "width": _NUM,
        "center": {"anyOf": [{"type": "null"}, {"type": "array", "items": _NUM}]},
        "velocity": {"type": "string", "enum": list(VELOCITY_MODES)},
        "epsilons": {"type": "array", "items": _NUM},
        "certified": {"type": "boolean"},
        "limit_refine": {"type": "integer", "minimum": 1},
        "limit_dt_max": {"anyOf": [{"type": "null"}, _NUM]},
        "out": {"anyOf": [{"type": "null"}, {"type": "string"}]},
        "tol_energy": _NUM,
        "plots": {"type": "boolean"},
    },
}


@dataclass
class RunConfig:
    """Flat run configuration; JSON keys match the field names (``lambda`` for ``lambda_``)."""

    dim: int = 2
    n: int = 64
    epsilon: float = 0.1
    nu: float = 0.1
    lambda_: float = 0.0
    gamma: float = 2.0
    cfl: float = 0.4
    dt_max: float = 1.0
    t_end: float = 1.0
    checkpoint_times: list[float] = field(default_factory=list)
    record_every_step: bool = False
    profile: str = "cosine_bump"
    a: float = 1.0
    b: float = 0.3
    width: float = 0.5
    center: list[float] | None = None
    velocity: str = "zero_velocity"
    epsilons: list[float] = field(default_factory=list)
    certified: bool = True
    limit_refine: int = 1
    limit_dt_max: float | None = None
    out: str | None = None
    tol_energy: float = 1e-4
    plots: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        """Validate against the schema and every model invariant.

        Raises:
            ConfigError: on unknown keys, wrong types or violated invariants.
        """
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "config"
            raise ConfigError(f"{where}: {exc.message}") from None
        kwargs = {("lambda_" if k == "lambda" else k): v for k, v in data.items()}
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        return d

    def validate(self) -> None:
        try:
            TorusGrid(self.dim, self.n)
            self.params().validate(self.dim)
            self.control()
            self.initial()
        except (InertiaLabError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def grid(self) -> TorusGrid:
        return TorusGrid(self.dim, self.n)

    def params(self) -> FluidParams:
        return FluidParams(self.epsilon, self.nu, self.lambda_, self.gamma)

    def control(self) -> StepControl:
        return StepControl(self.cfl, self.dt_max, self.t_end, tuple(self.checkpoint_times),
                           self.record_every_step)

    def initial(self) -> InitialData:
        center = tuple(self.center) if self.center is not None else None
        return InitialData(self.profile, self.a, self.b, self.width, center)

    def sweep(self) -> SweepConfig:
        try:
            return SweepConfig(tuple(self.epsilons or [self.epsilon]), self.dim, self.n, self.params(),
                               self.control(), self.initial(), self.velocity, self.certified,
                               self.limit_refine, self.limit_dt_max)
        except (InertiaLabError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return RunConfig.from_dict(data)


def resolve_out(cfg: RunConfig, flag: str | None, default: str) -> Path:
    """``INERTIA_LAB_OUT`` beats ``--out``, which beats the config's ``out``."""
    return Path(os.environ.get(OUT_ENV) or flag or cfg.out or default)


# -- subcommands -------------------------------------------------------------


def cmd_run_scaled(args) -> int:
    cfg = load_config(args.config)
    if not cfg.epsilon > 0:
        raise ConfigError("epsilon must be > 0 for run-scaled; use run-limit for epsilon = 0")
    grid, params = cfg.grid(), cfg.params()
    rho0 = cfg.initial().density(grid)
    u0 = initial_velocity(grid, rho0, params, cfg.velocity, cfg.epsilon)
    rec = run_scaled(grid, ScaledState(rho0, rho0 * u0), params, cfg.control())
    out = rec.save(resolve_out(cfg, args.out, "runs/scaled"))
    e0 = rec.budgets[0].energy
    summary = {"kind": "scaled", "out": str(out), "steps": rec.diagnostics["steps"],
               "r_max": max(rec.residuals), "r_max_rel": max(rec.residuals) / e0 if e0 else 0.0,
               "energy_check_passed": max(rec.residuals) <= cfg.tol_energy * e0}
    verdict = "PASS" if summary["energy_check_passed"] else "FAIL"
    _emit(args, summary, f"scaled run: {summary['steps']} steps, max r = {summary['r_max']:.3e} "
                         f"({summary['r_max_rel']:.3e} of E(0), {verdict} at tol "
                         f"{cfg.tol_energy:g}) -> {out}")
    return EXIT_OK


def cmd_run_limit(args) -> int:
    cfg = load_config(args.config)
    grid, params = cfg.grid(), cfg.params().with_epsilon(0.0)
    rec = run_limit(grid, LimitState(cfg.initial().density(grid)), params, cfg.control())
    out = rec.save(resolve_out(cfg, args.out, "runs/limit"))
    e0 = rec.budgets[0].internal
    qmax = rec.max_abs_residual()
    summary = {"kind": "limit", "out": str(out), "steps": rec.diagnostics["steps"], "q_max": qmax,
               "q_max_rel": qmax / e0 if e0 else 0.0,
               "max_slaving_defect": rec.diagnostics["max_slaving_defect"],
               "energy_check_passed": qmax <= cfg.tol_energy * e0}
    verdict = "PASS" if summary["energy_check_passed"] else "FAIL"
    _emit(args, summary, f"limit run: {summary['steps']} steps, q_max = {qmax:.3e} "
                         f"({summary['q_max_rel']:.3e} of internal(0), {verdict} at tol "
                         f"{cfg.tol_energy:g}) -> {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    sweep_cfg = cfg.sweep()
    workers = args.workers or default_workers(len(sweep_cfg.epsilons))
    try:
        record = epsilon_sweep(sweep_cfg, workers=workers)
    except IllPreparedData as exc:
        print(f"gate FAIL: {exc}", file=sys.stderr)
        return EXIT_GATE
    out = record.save(resolve_out(cfg, args.out, "runs/sweep"), plots=cfg.plots)
    failed = [e.epsilon for e in record.entries if e.failure]
    certs = [] if failed else [kinetic_decay_certificate(record, t) for t in sweep_cfg.checkpoints]
    summary = {"out": str(out), "failed_epsilons": failed, "fits": record.fits,
               "certificates": [{"name": c.name, "passed": c.passed} for c in certs]}
    lines = [f"sweep of {len(record.entries)} epsilons -> {out}"]
    lines += [f"fit {f['metric']} t={f['t']:g}: slope {f['slope']:.3f} +- {f['stderr']:.3f}"
              for f in record.fits]
    lines += [c.line() for c in certs]
    _emit(args, summary, "\n".join(lines))
    if failed:
        print(f"runs failed for epsilon in {failed}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK if all(c.passed for c in certs) else EXIT_GATE


def cmd_verify_operators(args) -> int:
    ladder = _parse_ladder(args.m_ladder) if args.m_ladder else None
    reports = verify_operators(ladder=ladder)
    if args.json:
        print(json.dumps([r.to_dict() for r in reports], indent=2))
    else:
        for r in reports:
            print(f"{'PASS' if r.passed else 'FAIL':4}  {r.check:26} tol={r.tolerance:g}")
        if args.m_ladder:
            fr = next(r for r in reports if r.check == "friedrichs_decay")
            print("m      commutator L1")
            for m, v in zip(fr.values["m"], fr.values["total"]):
                print(f"{m:<6d} {v:.6e}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_GATE


def cmd_report(args) -> int:
    """Summarize a run or sweep directory (``sweep.json`` or ``manifest.json``)."""
    target = Path(args.path or os.environ.get(OUT_ENV) or args.out or ".")
    if (target / "sweep.json").exists():
        data = json.loads((target / "sweep.json").read_text())
        lines = [f"sweep {data['inputs_hash'][:12]}: internal(0) = {data['internal0']:.6g}"]
        for e in data["entries"]:
            state = e["failure"] or f"K(T) = {e['kinetic'][-1]:.3e}, G(T) = {e['l1_gap'][-1]:.3e}"
            lines.append(f"  eps = {e['epsilon']:.3e}: {state}")
        lines += [f"  fit {f['metric']} t={f['t']:g}: slope {f['slope']:.3f} +- {f['stderr']:.3f}"
                  for f in data["fits"]]
        lines.append("  " + data["note"])
        _emit(args, data, "\n".join(lines))
        return EXIT_OK
    if (target / "manifest.json").exists():
        manifest = json.loads((target / "manifest.json").read_text())
        rows = np.genfromtxt(target / "budgets.csv", delimiter=",", names=True)
        res = np.atleast_1d(rows[rows.dtype.names[-1]])
        summary = {**manifest, "residual_max_abs": float(np.max(np.abs(res)))}
        _emit(args, summary, f"{manifest['kind']} run {manifest['inputs_hash'][:12]}: "
                             f"{len(res)} budget rows, max |residual| = {summary['residual_max_abs']:.3e}")
        return EXIT_OK
    raise ConfigError(f"{target} holds neither sweep.json nor manifest.json")


def _emit(args, summary: dict, text: str) -> None:
    if getattr(args, "json", False):
        print(json.dumps(summary, indent=2, default=float))
    else:
        print(text)


def _parse_ladder(spec: str) -> list[int]:
    try:
        lo, hi = (int(s) for s in spec.split(".."))
    except ValueError:
        raise ConfigError(f"--m-ladder expects A..B, got {spec!r}") from None
    try:
        return m_ladder(lo, hi)
    except InertiaLabError as exc:
        raise ConfigError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inertia-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {"run-scaled": cmd_run_scaled, "run-limit": cmd_run_limit, "sweep": cmd_sweep,
                "verify-operators": cmd_verify_operators, "report": cmd_report}
    for name, handler in handlers.items():
        p = sub.add_parser(name)
        p.set_defaults(handler=handler)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory (overridden by $INERTIA_LAB_OUT)")
        p.add_argument("--json", action="store_true", help="machine-readable output")
        if name == "sweep":
            p.add_argument("--workers", type=int, default=None, help="parallel epsilon runs")
        if name == "verify-operators":
            p.add_argument("--m-ladder", help="mollifier ladder A..B (doubling)")
        if name == "report":
            p.add_argument("path", nargs="?", help="run or sweep directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IllPreparedData as exc:
        print(f"gate FAIL: {exc}", file=sys.stderr)
        return EXIT_GATE
    except InertiaLabError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
