"""Run records and their on-disk layout.

A run directory holds ``budgets.csv``, ``manifest.json`` and one binary field
file per stored checkpoint (``fields/rho_t<time>.tfld``). Every file is
written to a temporary sibling and renamed into place.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .model import EnergyBudget


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def content_hash(obj: Any) -> str:
    """Git blob-style SHA-1 of the canonical JSON encoding."""
    payload = canonical_json(obj).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()


def csv_text(header: list[str] | tuple[str, ...], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


@dataclass
class RunRecord:
    """Trajectory summary of one solver run.

    ``budgets`` holds one ``EnergyBudget`` per recorded instant (t = 0 first).
    ``residuals`` is the energy residual per budget row: ``r(t)`` for scaled
    runs, ``q(t)`` for limit runs. ``fields`` maps a recorded time to the
    stored arrays (``rho`` and, for scaled runs, ``mom``).
    """

    kind: str
    grid_dim: int
    grid_n: int
    params: dict
    control: dict
    budgets: list[EnergyBudget] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    fields: dict[float, dict[str, np.ndarray]] = field(default_factory=dict)
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def times(self) -> list[float]:
        return [b.time for b in self.budgets]

    def budget_at(self, t: float) -> EnergyBudget:
        for b in self.budgets:
            if abs(b.time - t) <= 1e-12 * max(1.0, abs(t)):
                return b
        raise KeyError(f"no budget recorded at t={t}")

    def field_at(self, t: float, name: str = "rho") -> np.ndarray:
        for key, val in self.fields.items():
            if abs(key - t) <= 1e-12 * max(1.0, abs(t)):
                return val[name]
        raise KeyError(f"no {name} stored at t={t}")

    def max_abs_residual(self) -> float:
        return max((abs(r) for r in self.residuals), default=0.0)

    def budgets_csv(self) -> str:
        header = list(EnergyBudget.CSV_COLUMNS) + ["q" if self.kind == "limit" else "r"]
        rows = [b.row() + [res] for b, res in zip(self.budgets, self.residuals)]
        return csv_text(header, rows)

    def manifest(self) -> dict:
        inputs = {"kind": self.kind, "grid": {"dim": self.grid_dim, "n": self.grid_n},
                  "params": self.params, "control": self.control}
        return {**inputs, "inputs_hash": content_hash(inputs),
                "diagnostics": self.diagnostics,
                "stored_times": sorted(self.fields)}

    def save(self, out_dir: str | Path) -> Path:
        from .field import Field, TorusGrid, write_field

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "budgets.csv", self.budgets_csv())
        grid = TorusGrid(self.grid_dim, self.grid_n)
        roles = {"rho": "density", "mom": "momentum", "u": "velocity"}
        for t, arrays in sorted(self.fields.items()):
            for name, values in arrays.items():
                write_field(out / "fields" / f"{name}_t{t:.6f}.tfld",
                            Field(grid, values, roles.get(name, "scalar")))
        atomic_write_text(out / "manifest.json", json.dumps(self.manifest(), indent=2,
                                                             default=_json_default))
        return out
