"""Multiproduct extrapolation of second-order split-operator steps."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .grid import Grid1D
from .systems import Schedule, external_potential, interaction_matrix


def mp_coefficients(k_list) -> tuple[np.ndarray, float]:
    """Richardson weights c_j = prod_{i != j} k_j^2 / (k_j^2 - k_i^2) and closure 2 - sum(c)."""
    ks = [int(k) for k in k_list]
    if not ks or any(k < 1 for k in ks):
        raise ValueError("substep counts must be positive integers")
    if len(set(ks)) != len(ks):
        raise ValueError(f"substep counts must be distinct, got {ks}")
    coeffs = []
    for j, kj in enumerate(ks):
        c = Fraction(1)
        for i, ki in enumerate(ks):
            if i != j:
                c *= Fraction(kj * kj, kj * kj - ki * ki)
        coeffs.append(c)
    c_f = 2 - sum(coeffs)
    return np.array([float(c) for c in coeffs]), float(c_f)


def substep_midpoints(n: int) -> np.ndarray:
    """Fractions (2i - 1) / (2n), i = 1..n, of the step at which V is sampled."""
    if n < 1:
        raise ValueError("n_substeps must be >= 1")
    return (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)


@dataclass(frozen=True)
class MultiproductScheme:
    substep_counts: tuple = (1, 2, 6)
    coefficients: np.ndarray = field(init=False, repr=False)
    closure: float = field(init=False)

    def __post_init__(self):
        c, c_f = mp_coefficients(self.substep_counts)
        object.__setattr__(self, "substep_counts", tuple(int(k) for k in self.substep_counts))
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "closure", c_f)

    @property
    def order(self) -> int:
        return len(self.substep_counts)

    @classmethod
    def of_order(cls, m: int) -> "MultiproductScheme":
        return cls((1, 2, 6)[:m]) if m <= 3 else cls(tuple(range(1, m + 1)))


class SplitSystem:
    """Interface for split-operator stepping: psi is an array over one or more grid axes."""

    axes: tuple = (-1,)

    def kinetic_diagonal(self) -> np.ndarray:
        raise NotImplementedError

    def potential(self, t: float) -> np.ndarray:
        raise NotImplementedError


@dataclass
class VanDijkSystem(SplitSystem):
    """H(t) = -d^2/dx^2 + (4 exp(-2t) - 1/16) x^2 - 2 exp(-t)."""

    grid: Grid1D
    axes: tuple = (-1,)

    def kinetic_diagonal(self) -> np.ndarray:
        # -d^2/dx^2 rather than -1/2 d^2/dx^2
        return self.grid.wavenumbers**2

    def potential(self, t: float) -> np.ndarray:
        x = self.grid.x
        return (4.0 * np.exp(-2.0 * t) - 1.0 / 16.0) * x**2 - 2.0 * np.exp(-t)

    def apply(self, psi: np.ndarray, t: float) -> np.ndarray:
        kin = np.fft.ifft(self.kinetic_diagonal() * np.fft.fft(psi))
        return kin + self.potential(t) * psi


def vandijk_exact(grid: Grid1D, t: float) -> np.ndarray:
    x = grid.x
    return (2.0 / np.pi) ** 0.25 * np.exp(-(x**2) * np.exp(-t) - t / 4.0 + 1j * x**2 / 8.0)


@dataclass
class PairSplitSystem(SplitSystem):
    """Two electrons on a grid under a scheduled external potential."""

    system: object
    grid: Grid1D
    schedule: Schedule
    axes: tuple = (-2, -1)

    def __post_init__(self):
        self._w = interaction_matrix(self.system, self.grid)

    def kinetic_diagonal(self) -> np.ndarray:
        kd = self.grid.kinetic_diagonal
        return kd[:, None] + kd[None, :]

    def potential(self, t: float) -> np.ndarray:
        t = min(max(t, 0.0), self.schedule.total_time)
        v = external_potential(self.system, self.schedule, t, self.grid)
        return v[:, None] + v[None, :] + self._w


def trotter2_step(psi, system: SplitSystem, t0: float, dt: float, n_substeps: int = 1) -> np.ndarray:
    """n_substeps Strang steps of length dt/n with V sampled at each substep midpoint."""
    h = dt / n_substeps
    half_kin = np.exp(-0.5j * h * system.kinetic_diagonal())
    out = np.asarray(psi, dtype=complex)
    for frac in substep_midpoints(n_substeps):
        out = np.fft.ifftn(half_kin * np.fft.fftn(out, axes=system.axes), axes=system.axes)
        out = out * np.exp(-1j * h * system.potential(t0 + frac * dt))
        out = np.fft.ifftn(half_kin * np.fft.fftn(out, axes=system.axes), axes=system.axes)
    return out


def mp_step(psi, scheme: MultiproductScheme, system: SplitSystem, t0: float, dt: float):
    """Weighted sum of Trotter products, renormalized.

    Returns (psi', norm deficit) where the deficit is 1 - |sum_j c_j U_j psi| / |psi|.
    """
    psi = np.asarray(psi, dtype=complex)
    acc = np.zeros_like(psi)
    for c, k in zip(scheme.coefficients, scheme.substep_counts):
        acc += c * trotter2_step(psi, system, t0, dt, k)
    ratio = np.linalg.norm(acc) / np.linalg.norm(psi)
    return acc / ratio, float(1.0 - ratio)


def mp_evolve(psi, scheme: MultiproductScheme, system: SplitSystem, t0: float, dt: float, n_steps: int,
              callback=None):
    """Repeated mp_step; ``callback(step, t, psi)`` is called after every step."""
    deficits = np.empty(n_steps)
    t = t0
    for s in range(n_steps):
        psi, deficits[s] = mp_step(psi, scheme, system, t, dt)
        t = t0 + (s + 1) * dt
        if callback is not None:
            callback(s + 1, t, psi)
    return psi, deficits


@dataclass
class BenchmarkRow:
    dt: float
    order: int
    error: float
    mean_norm_deficit: float


def vandijk_benchmark(dts, orders=(1, 2, 3), t_final: float = 1.0, n_points: int = 256,
                      length: float = 40.0) -> list[BenchmarkRow]:
    """Terminal L2 error versus the analytic solution for each (dt, M)."""
    grid = Grid1D(n_points, length / n_points)
    system = VanDijkSystem(grid)
    psi0 = vandijk_exact(grid, 0.0)
    ref = vandijk_exact(grid, t_final)
    rows = []
    for dt in dts:
        n_steps = int(round(t_final / dt))
        if abs(n_steps * dt - t_final) > 1e-9 * t_final:
            raise ValueError(f"dt={dt} does not divide t_final={t_final}")
        for m in orders:
            psi, deficits = mp_evolve(psi0, MultiproductScheme.of_order(m), system, 0.0, dt, n_steps)
            err = float(np.sqrt(grid.dx) * np.linalg.norm(psi - ref))
            rows.append(BenchmarkRow(float(dt), int(m), err, float(np.mean(np.abs(deficits)))))
    return rows


def convergence_slopes(rows: list[BenchmarkRow]) -> dict[int, float]:
    """Least-squares log-log slope of error against dt, per order."""
    out = {}
    for m in sorted({r.order for r in rows}):
        sel = [r for r in rows if r.order == m]
        x = np.log([r.dt for r in sel])
        y = np.log([r.error for r in sel])
        out[m] = float(np.polyfit(x, y, 1)[0])
    return out
