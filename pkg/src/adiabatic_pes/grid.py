"""Uniform periodic 1D Fourier grid and its kinetic/potential operators."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid with ``n_points`` samples spaced by ``dx`` (bohr).

    By default the grid is centered on the origin, x0 = -dx (n - 1) / 2.
    """

    n_points: int
    dx: float
    x0: float | None = None
    x: np.ndarray = field(init=False, repr=False, compare=False)
    wavenumbers: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 4:
            raise ValueError(f"n_points must be an integer >= 4, got {self.n_points}")
        if not self.dx > 0:
            raise ValueError(f"dx must be positive, got {self.dx}")
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "dx", float(self.dx))
        if self.x0 is None:
            object.__setattr__(self, "x0", -self.dx * (self.n_points - 1) / 2.0)
        x = self.x0 + self.dx * np.arange(self.n_points)
        k = 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)
        x.flags.writeable = False
        k.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "wavenumbers", k)

    @property
    def kinetic_diagonal(self) -> np.ndarray:
        """k^2/2 in FFT order."""
        return 0.5 * self.wavenumbers**2

    def integrate(self, f: np.ndarray, axis: int = -1) -> np.ndarray:
        return self.dx * np.sum(f, axis=axis)

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        """<f|g> with dx quadrature."""
        return self.dx * np.vdot(f, g)

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(self.dx * np.sum(np.abs(f) ** 2)))

    def same_as(self, other: "Grid1D") -> bool:
        return self.n_points == other.n_points and self.dx == other.dx and self.x0 == other.x0


@dataclass(frozen=True)
class GridFunction:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != (self.grid.n_points,):
            raise ValueError(
                f"values has shape {values.shape}, expected ({self.grid.n_points},)"
            )
        object.__setattr__(self, "values", values)

    def norm(self) -> float:
        return self.grid.norm(self.values)


def _values(f):
    return f.values if isinstance(f, GridFunction) else np.asarray(f)


def apply_kinetic(f, grid: Grid1D | None = None, axis: int = -1):
    """Apply -1/2 d^2/dx^2 spectrally along ``axis``.

    Accepts a GridFunction (returns one) or a raw array with an explicit grid.
    """
    if isinstance(f, GridFunction):
        return GridFunction(f.grid, apply_kinetic(f.values, f.grid))
    if grid is None:
        raise TypeError("grid is required when f is a plain array")
    f = np.asarray(f)
    shape = [1] * f.ndim
    shape[axis] = grid.n_points
    t = grid.kinetic_diagonal.reshape(shape)
    out = np.fft.ifft(t * np.fft.fft(f, axis=axis), axis=axis)
    if np.isrealobj(f):
        return out.real
    return out


def apply_kinetic_power(f: np.ndarray, grid: Grid1D, power: int, axis: int = -1) -> np.ndarray:
    """Apply T**power in one FFT round trip."""
    f = np.asarray(f)
    shape = [1] * f.ndim
    shape[axis] = grid.n_points
    t = (grid.kinetic_diagonal**power).reshape(shape)
    out = np.fft.ifft(t * np.fft.fft(f, axis=axis), axis=axis)
    return out.real if np.isrealobj(f) else out


def kinetic_matrix(grid: Grid1D) -> np.ndarray:
    """Dense Fourier-grid kinetic matrix T_xy = (1/N) sum_k (k^2/2) cos(k (x - y))."""
    n = grid.n_points
    column = np.fft.ifft(grid.kinetic_diagonal).real
    idx = np.arange(n)
    t = column[(idx[:, None] - idx[None, :]) % n]
    return 0.5 * (t + t.T)


def apply_diagonal_potential(f, v):
    """Pointwise v_i f_i. Grid functions must share a grid."""
    if isinstance(f, GridFunction) and isinstance(v, GridFunction):
        if not f.grid.same_as(v.grid):
            raise ValueError("grid mismatch between function and potential")
        return GridFunction(f.grid, v.values * f.values)
    fv, vv = _values(f), _values(v)
    if fv.shape[-1] != vv.shape[-1]:
        raise ValueError(f"grid mismatch: {fv.shape[-1]} vs {vv.shape[-1]} points")
    out = vv * fv
    return GridFunction(f.grid, out) if isinstance(f, GridFunction) else out
