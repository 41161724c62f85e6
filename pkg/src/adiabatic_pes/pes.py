"""Line-integral energies along the density path and the derived error metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .grid import Grid1D


def _channels(series):
    if isinstance(series, dict):
        return list(series.values())
    if isinstance(series, (list, tuple)):
        return list(series)
    return [series]


def line_integral_rate(v_ks, drho_dt, dx: float) -> np.ndarray:
    """dF/dt = integral v_KS(r, t) d rho/dt dr at every time, summed over spin channels."""
    vs, ds = _channels(v_ks), _channels(drho_dt)
    if len(vs) != len(ds):
        raise ValueError("potential and density-rate channels differ in number")
    total = None
    for v, d in zip(vs, ds):
        v, d = np.asarray(v, float), np.asarray(d, float)
        if v.shape != d.shape:
            raise ValueError(f"misaligned series: {v.shape} vs {d.shape}")
        rate = dx * np.sum(v * d, axis=-1)
        total = rate if total is None else total + rate
    return total


def line_integral_accumulate(v_ks, drho_dt, dx: float, dt: float) -> np.ndarray:
    """Running trapezoidal value of the line integral, starting at 0."""
    rate = line_integral_rate(v_ks, drho_dt, dx)
    return cumulative_trapezoid(rate, dx=dt, initial=0.0)


@dataclass
class EnergyBreakdown:
    """Per-time energy decomposition E_total = T_s + V_ext + F."""

    t: np.ndarray
    param: np.ndarray
    T_s: np.ndarray
    V_ext: np.ndarray
    F: np.ndarray
    E_total: np.ndarray
    line_integral: np.ndarray
    E_exact: np.ndarray | None = None
    energy_error: np.ndarray | None = None
    density_error: np.ndarray | None = None

    def __len__(self):
        return len(self.t)

    def subset(self, idx) -> "EnergyBreakdown":
        kw = {}
        for f in fields(self):
            val = getattr(self, f.name)
            kw[f.name] = None if val is None else np.asarray(val)[idx]
        return EnergyBreakdown(**kw)

    def with_reference(self, e_exact, density_error=None) -> "EnergyBreakdown":
        e_exact = np.asarray(e_exact, float)
        energy_error, _ = error_metrics(self.E_total, e_exact)
        return EnergyBreakdown(
            self.t, self.param, self.T_s, self.V_ext, self.F, self.E_total,
            self.line_integral, e_exact, energy_error,
            None if density_error is None else np.asarray(density_error, float),
        )

    def to_csv(self, path) -> Path:
        path = Path(path)
        cols = ["t", "param", "T_s", "V_ext", "F", "E_total", "E_exact", "energy_error", "density_error"]
        n = len(self.t)
        data = {}
        for c in cols:
            attr = "param" if c == "param" else c
            val = getattr(self, attr)
            data[c] = np.full(n, np.nan) if val is None else np.asarray(val, float)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for i in range(n):
                w.writerow([repr(float(data[c][i])) for c in cols])
        return path


def assemble_pes(
    times,
    params,
    t_s,
    v_ext_series,
    rho_series,
    line_integral,
    e_exact_initial: float,
    dx: float,
) -> EnergyBreakdown:
    """Anchor F at t=0 on the exact initial energy and carry it forward with the line integral.

    ``t_s`` may be a per-channel list (summed); ``rho_series`` likewise.
    """
    t_s = sum(np.asarray(a, float) for a in _channels(t_s))
    rho = sum(np.asarray(r, float) for r in _channels(rho_series))
    v_ext = np.asarray(v_ext_series, float)
    v_energy = dx * np.sum(v_ext * rho, axis=-1)
    li = np.asarray(line_integral, float)
    f0 = e_exact_initial - t_s[0] - v_energy[0]
    f = f0 + li
    return EnergyBreakdown(
        t=np.asarray(times, float),
        param=np.asarray(params, float),
        T_s=t_s,
        V_ext=v_energy,
        F=f,
        E_total=t_s + v_energy + f,
        line_integral=li,
    )


def error_metrics(e_series, reference, rho=None, rho_check=None, dx: float | None = None):
    """Signed energy error and L2 density distance sqrt(dx sum |rho - rho_check|^2)."""
    energy_error = np.asarray(e_series, float) - np.asarray(reference, float)
    density_error = None
    if rho is not None:
        if dx is None:
            raise ValueError("dx needed for the density error")
        diff = np.asarray(rho, float) - np.asarray(rho_check, float)
        density_error = np.sqrt(dx * np.sum(diff**2, axis=-1))
    return energy_error, density_error

