"""Periodic lattice fields on the 2*pi torus with Fourier-space calculus.

Scalar fields are real arrays of shape ``(n,) * dim`` and vector fields are
arrays of shape ``(dim,) + (n,) * dim``. Every operator is a pure function of
its inputs; the grid only holds read-only wavenumber tables, so one grid may be
shared between threads (``numpy.fft`` keeps no mutable plan state).

First-derivative multipliers drop the Nyquist mode, so every operator built
from them (gradient, divergence, Lame inverse, Bogovskii) acts on the same
real-valued subspace and discrete integration by parts holds exactly.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidViscosity, NonZeroMean

TWO_PI = 2.0 * np.pi

ROLE_TAGS = {
    "scalar": 0,
    "density": 1,
    "pressure": 2,
    "velocity": 3,
    "momentum": 4,
    "vector": 5,
}
_VECTOR_ROLES = {"velocity", "momentum", "vector"}

_HEADER = struct.Struct("<4sIIIII8x")
MAGIC = b"TFLD"
FORMAT_VERSION = 1


class TorusGrid:
    """Uniform periodic lattice on ``[0, 2*pi)^dim``.

    Args:
        dim: spatial dimension, 2 or 3.
        n: points per axis; even and at least 8.
    """

    def __init__(self, dim: int, n: int):
        if dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {dim}")
        if n < 8 or n % 2:
            raise ValueError(f"n must be even and >= 8, got {n}")
        self.dim = int(dim)
        self.n = int(n)
        self.h = TWO_PI / self.n
        self.volume = TWO_PI**self.dim
        self.shape = (self.n,) * self.dim
        self.axes = tuple(range(-self.dim, 0))

        full = np.fft.fftfreq(self.n, d=1.0 / self.n)
        full[self.n // 2] = self.n // 2
        half = np.fft.rfftfreq(self.n, d=1.0 / self.n)
        per_axis = [full] * (self.dim - 1) + [half]
        self.spectral_shape = tuple(len(a) for a in per_axis)

        k, kd = [], []
        for ax, vals in enumerate(per_axis):
            bshape = [1] * self.dim
            bshape[ax] = len(vals)
            k.append(vals.reshape(bshape))
            deriv = vals.copy()
            deriv[np.abs(deriv) == self.n // 2] = 0.0
            kd.append(deriv.reshape(bshape))
        self.k = tuple(k)
        self.kd = tuple(kd)
        self.k2 = sum(a**2 for a in k)
        self.kd2 = sum(a**2 for a in kd)
        with np.errstate(divide="ignore"):
            inv = np.where(self.kd2 > 0, 1.0 / np.where(self.kd2 > 0, self.kd2, 1.0), 0.0)
        self.kd2_inv = inv
        cutoff = self.n / 3.0
        mask = np.ones(self.spectral_shape, dtype=bool)
        for a in k:
            mask &= np.abs(a) < cutoff
        self.dealias_mask = mask
        for arr in (*self.k, *self.kd, self.k2, self.kd2, self.kd2_inv, self.dealias_mask):
            arr.flags.writeable = False

    def __repr__(self) -> str:
        return f"TorusGrid(dim={self.dim}, n={self.n})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TorusGrid) and (self.dim, self.n) == (other.dim, other.n)

    def __hash__(self) -> int:
        return hash((self.dim, self.n))

    # -- lattice ---------------------------------------------------------

    def wavenumbers(self) -> np.ndarray:
        """Sorted per-axis integer wavenumbers ``-n/2+1, ..., n/2``."""
        return np.arange(-self.n // 2 + 1, self.n // 2 + 1)

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Broadcast-ready lattice coordinates ``x_i = i * h``."""
        x = np.arange(self.n) * self.h
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def zeros_scalar(self) -> np.ndarray:
        return np.zeros(self.shape)

    def zeros_vector(self) -> np.ndarray:
        return np.zeros((self.dim,) + self.shape)

    def check_scalar(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise ValueError(f"scalar field shape {f.shape} != {self.shape}")
        return f

    def check_vector(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,) + self.shape:
            raise ValueError(f"vector field shape {v.shape} != {(self.dim,) + self.shape}")
        return v

    # -- transforms ------------------------------------------------------

    def fft(self, f: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(f, axes=self.axes)

    def ifft(self, fh: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(fh, s=self.shape, axes=self.axes)

    def dealias(self, f: np.ndarray) -> np.ndarray:
        """Zero every mode outside the 2/3 box."""
        return self.ifft(self.fft(f) * self.dealias_mask)

    # -- differential operators -------------------------------------------

    def gradient(self, f: np.ndarray) -> np.ndarray:
        fh = self.fft(self.check_scalar(f))
        return np.stack([self.ifft(1j * ka * fh) for ka in self.kd])

    def divergence(self, v: np.ndarray) -> np.ndarray:
        v = self.check_vector(v)
        return self.ifft(sum(1j * ka * self.fft(vi) for ka, vi in zip(self.kd, v)))

    def grad_tensor(self, v: np.ndarray) -> np.ndarray:
        """Entry ``[i, j]`` is ``d_i v_j``."""
        v = self.check_vector(v)
        vh = [self.fft(vi) for vi in v]
        return np.stack([np.stack([self.ifft(1j * ki * vj) for vj in vh]) for ki in self.kd])

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return self.ifft(-self.k2 * self.fft(self.check_scalar(f)))

    def inverse_laplacian(self, f: np.ndarray) -> np.ndarray:
        """Mean-free solution of ``Lap g = f - mean(f)``."""
        return self.ifft(-self.kd2_inv * self.fft(self.check_scalar(f)))

    def lame_apply(self, u: np.ndarray, nu: float, lam: float) -> np.ndarray:
        """``nu Lap u + (nu + lam) grad div u``."""
        uh = np.stack([self.fft(ui) for ui in self.check_vector(u)])
        return np.stack([self.ifft(c) for c in self._lame_forward_hat(uh, nu, lam)])

    def _lame_forward_hat(self, uh, nu, lam):
        kdotu = sum(ka * ua for ka, ua in zip(self.kd, uh))
        return [-nu * self.kd2 * ua - (nu + lam) * ka * kdotu for ka, ua in zip(self.kd, uh)]

    def lame_solve_hat(self, fh, nu: float, lam: float) -> list[np.ndarray]:
        """Spectral Lame inverse on transformed components (no checks)."""
        kdotf = sum(ka * fa for ka, fa in zip(self.kd, fh))
        out = []
        for ka, fa in zip(self.kd, fh):
            par = kdotf * ka * self.kd2_inv
            perp = fa - par
            out.append(-(par / (2.0 * nu + lam) + perp / nu) * self.kd2_inv)
        return out

    def lame_solve(self, f: np.ndarray, nu: float, lam: float, tol: float = 1e-10) -> np.ndarray:
        """Zero-mean ``u`` with ``nu Lap u + (nu + lam) grad div u = f``.

        Raises:
            InvalidViscosity: if ``nu <= 0`` or ``nu + lam < 0``.
            NonZeroMean: if some component of ``f`` has ``|mean| > tol * (1 + max|f|)``.
        """
        check_viscosity(nu, lam)
        f = self.check_vector(f)
        scale = 1.0 + float(np.max(np.abs(f))) if f.size else 1.0
        for i, fi in enumerate(f):
            mu = float(np.mean(fi))
            if abs(mu) > tol * scale:
                raise NonZeroMean(f"component {i} of forcing has mean {mu:.3e}")
        fh = [self.fft(fi) for fi in f]
        return np.stack([self.ifft(c) for c in self.lame_solve_hat(fh, nu, lam)])

    def mollifier_symbol(self, m: float) -> np.ndarray:
        if not m > 0:
            raise ValueError(f"mollifier index must be positive, got {m}")
        return np.exp(-self.k2 / (2.0 * m * m))

    def mollify(self, f: np.ndarray, m: float) -> np.ndarray:
        """Gaussian Fourier smoothing ``exp(-|k|^2 / (2 m^2))``; scalar or vector."""
        sym = self.mollifier_symbol(m)
        f = np.asarray(f, dtype=float)
        if f.shape == self.shape:
            return self.ifft(sym * self.fft(f))
        f = self.check_vector(f)
        return np.stack([self.ifft(sym * self.fft(fi)) for fi in f])

    def half_shift(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Trigonometric interpolant of ``f`` at ``x + h/2`` along ``axis``."""
        ka = self.kd[axis]
        return self.ifft(np.exp(0.5j * ka * self.h) * self.fft(self.check_scalar(f)))

    # -- quadrature ------------------------------------------------------

    def integrate(self, f: np.ndarray) -> float:
        """Rectangle rule ``h^dim * sum(f)``; spectrally accurate for smooth periodic f."""
        return float(self.h**self.dim * np.sum(f))

    def mean(self, f: np.ndarray) -> float:
        return float(np.mean(f))

    def lp_norm(self, f: np.ndarray, p: float) -> float:
        if not p >= 1:
            raise ValueError(f"p must be >= 1, got {p}")
        return self.integrate(np.abs(f) ** p) ** (1.0 / p)

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        """``integral of f . g`` for matching scalar, vector or tensor fields."""
        return float(self.h**self.dim * np.sum(np.asarray(f) * np.asarray(g)))

    def parseval_l2sq(self, f: np.ndarray) -> float:
        """``||f||_2^2`` computed from Fourier coefficients."""
        fh = np.fft.fftn(self.check_scalar(f))
        return float(self.volume * np.sum(np.abs(fh) ** 2) / self.n ** (2 * self.dim))


def check_viscosity(nu: float, lam: float) -> None:
    if not nu > 0:
        raise InvalidViscosity(f"nu must be > 0, got {nu}")
    if not nu + lam >= 0:
        raise InvalidViscosity(f"nu + lambda must be >= 0, got {nu + lam}")


def random_smooth_field(grid: TorusGrid, rng: np.random.Generator, kmax: int = 6,
                        decay: float = 1.0, ncomp: int | None = None) -> np.ndarray:
    """Random real field with Fourier content only at ``|k|_inf <= kmax``."""
    comps = []
    for _ in range(1 if ncomp is None else ncomp):
        fh = rng.standard_normal(grid.spectral_shape) + 1j * rng.standard_normal(grid.spectral_shape)
        fh *= np.exp(-decay * np.sqrt(grid.k2) / max(kmax, 1))
        keep = np.ones(grid.spectral_shape, dtype=bool)
        for a in grid.k:
            keep &= np.abs(a) <= kmax
        f = grid.ifft(fh * keep)
        comps.append(f / np.std(f))
    return comps[0] if ncomp is None else np.stack(comps)


# -- serialization ----------------------------------------------------------


@dataclass(frozen=True)
class Field:
    """A lattice field tagged with its physical role, used for persistence."""

    grid: TorusGrid
    values: np.ndarray
    role: str = "scalar"

    def __post_init__(self):
        if self.role not in ROLE_TAGS:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in _VECTOR_ROLES:
            self.grid.check_vector(self.values)
        else:
            self.grid.check_scalar(self.values)

    @property
    def ncomp(self) -> int:
        return self.grid.dim if self.role in _VECTOR_ROLES else 1

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(MAGIC, FORMAT_VERSION, self.grid.dim, self.grid.n,
                              ROLE_TAGS[self.role], self.ncomp)
        body = np.ascontiguousarray(self.values, dtype="<f8").tobytes(order="C")
        return header + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Field":
        if len(data) < _HEADER.size:
            raise ValueError("truncated field header")
        magic, version, dim, n, tag, ncomp = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported field format version {version}")
        role = {v: k for k, v in ROLE_TAGS.items()}.get(tag)
        if role is None:
            raise ValueError(f"unknown role tag {tag}")
        grid = TorusGrid(dim, n)
        shape = ((ncomp,) if role in _VECTOR_ROLES else ()) + grid.shape
        count = int(np.prod(shape))
        body = data[_HEADER.size:]
        if len(body) != 8 * count:
            raise ValueError(f"expected {8 * count} payload bytes, got {len(body)}")
        values = np.frombuffer(body, dtype="<f8").reshape(shape).astype(float)
        return cls(grid, values, role)

    def to_csv(self) -> str:
        """Debug dump: one row per lattice point, index columns then values."""
        if self.grid.n > 64:
            raise ValueError("CSV export is limited to n <= 64")
        buf = io.StringIO()
        w = csv.writer(buf)
        idx_cols = [f"i{a}" for a in range(self.grid.dim)]
        val_cols = ["value"] if self.ncomp == 1 else [f"c{c}" for c in range(self.ncomp)]
        w.writerow(idx_cols + val_cols)
        vals = self.values.reshape((self.ncomp,) + self.grid.shape)
        for index in np.ndindex(*self.grid.shape):
            w.writerow(list(index) + [repr(float(vals[(c,) + index])) for c in range(self.ncomp)])
        return buf.getvalue()


def write_field(path: str | Path, field: Field) -> None:
    from .records import atomic_write_bytes

    atomic_write_bytes(Path(path), field.to_bytes())


def read_field(path: str | Path) -> Field:
    return Field.from_bytes(Path(path).read_bytes())
