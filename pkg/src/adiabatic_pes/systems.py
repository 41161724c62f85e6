"""Model Hamiltonians and the adiabatic schedule that drives them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid1D

# S(s) = -20 s^7 + 70 s^6 - 84 s^5 + 35 s^4, highest power first for np.polyval
_SCHEDULE_POLY = np.array([-20.0, 70.0, -84.0, 35.0, 0.0, 0.0, 0.0, 0.0])


def _check_unit_interval(s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0.0) or np.any(s > 1.0):
        raise ValueError("schedule argument must lie in [0, 1]")
    return s


def schedule_value(s):
    """Septic ramp with S(0)=0, S(1)=1 and vanishing first three endpoint derivatives."""
    s = _check_unit_interval(s)
    # S(s) = 1 - S(1 - s); evaluating the upper half this way keeps S <= 1 in floating point
    low = np.minimum(s, 1.0 - s)
    p = np.polyval(_SCHEDULE_POLY, low)
    out = np.where(s <= 0.5, p, 1.0 - p)
    return float(out) if out.ndim == 0 else out


def schedule_derivative(s, order: int = 1):
    """d^order S / ds^order."""
    s = _check_unit_interval(s)
    out = np.polyval(np.polyder(_SCHEDULE_POLY, order), s)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SoftCoulombLiH:
    """Frozen-core 1D LiH: two soft-Coulomb wells a distance R apart."""

    soft_a: float = 0.7
    soft_b: float = 2.25
    soft_ee: float = 0.6
    kind = "lih"

    def __post_init__(self):
        if min(self.soft_a, self.soft_b, self.soft_ee) <= 0:
            raise ValueError("softening parameters must be positive")

    def v_ext(self, x, R: float):
        x = np.asarray(x, dtype=float)
        return -1.0 / np.sqrt((x - R / 2.0) ** 2 + self.soft_a) - 1.0 / np.sqrt(
            (x + R / 2.0) ** 2 + self.soft_b
        )

    def interaction(self, x1, x2):
        return 1.0 / np.sqrt((np.asarray(x1) - np.asarray(x2)) ** 2 + self.soft_ee)


@dataclass(frozen=True)
class HarmonicTrap:
    """Electrons in prefactor * omega * x^2 with a soft-Coulomb repulsion.

    The default prefactor 1/2 is the usual oscillator convention; set it to 1
    for the bare omega x^2 form.
    """

    omega_start: float = 1.0
    omega_end: float = 1.1
    soft_ee: float = 4.0
    prefactor: float = 0.5
    kind = "harmonic"

    def __post_init__(self):
        if self.soft_ee <= 0:
            raise ValueError("soft_ee must be positive")

    def v_ext(self, x, omega: float):
        return self.prefactor * omega * np.asarray(x, dtype=float) ** 2

    def interaction(self, x1, x2):
        return 1.0 / np.sqrt((np.asarray(x1) - np.asarray(x2)) ** 2 + self.soft_ee)


SYSTEMS = {"lih": SoftCoulombLiH, "harmonic": HarmonicTrap}


@dataclass(frozen=True)
class Schedule:
    """Ramp between two endpoint parameters over ``total_time``.

    ``geometric`` moves the Hamiltonian parameter itself, parameter(t) = A + (B - A) S(t).
    ``hamiltonian_mix`` blends the endpoint potentials, (1 - S) v_A + S v_B.
    """

    total_time: float
    start: float
    end: float
    mode: str = "geometric"

    def __post_init__(self):
        if self.mode not in ("geometric", "hamiltonian_mix"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if not self.total_time > 0:
            raise ValueError("total_time must be positive")

    def fraction(self, t: float) -> float:
        s = t / self.total_time
        # tolerate round-off from accumulated step times
        if -1e-12 < s < 0.0:
            s = 0.0
        elif 1.0 < s < 1.0 + 1e-12:
            s = 1.0
        return s

    def ramp(self, t: float) -> float:
        return schedule_value(self.fraction(t))

    def parameter(self, t: float) -> float:
        """Nominal parameter at time t (exact for geometric mode)."""
        return self.start + (self.end - self.start) * self.ramp(t)


def external_potential(system, schedule: Schedule, t: float, grid: Grid1D) -> np.ndarray:
    """v_ext on the grid at time t."""
    if not hasattr(system, "v_ext"):
        raise TypeError(f"unknown system kind {type(system).__name__}")
    if schedule.mode == "geometric":
        return system.v_ext(grid.x, schedule.parameter(t))
    S = schedule.ramp(t)
    return (1.0 - S) * system.v_ext(grid.x, schedule.start) + S * system.v_ext(
        grid.x, schedule.end
    )


def interaction_potential(system, x1, x2):
    return system.interaction(x1, x2)


def interaction_matrix(system, grid: Grid1D) -> np.ndarray:
    """W(x_p, x_q) on all grid pairs."""
    return system.interaction(grid.x[:, None], grid.x[None, :])
