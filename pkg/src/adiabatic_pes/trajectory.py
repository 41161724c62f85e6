"""Density time series and their on-disk formats."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .grid import Grid1D

PROVENANCES = ("exact", "sampled", "smoothed")

_MAGIC = b"DTRJ"
_VERSION = 1
# magic, version, n_points, n_times, stride, dx, dt, x0
_HEADER = struct.Struct("<4sIIIIddd")


@dataclass
class DensityTrajectory:
    """rho(x, t) with first and second time derivatives on a uniform time mesh."""

    grid: Grid1D
    times: np.ndarray
    rho: np.ndarray
    drho_dt: np.ndarray
    d2rho_dt2: np.ndarray
    provenance: str = "exact"
    n_electrons: float | None = None
    stride: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        self.times = np.asarray(self.times, dtype=float)
        n_t, n_x = len(self.times), self.grid.n_points
        for name in ("rho", "drho_dt", "d2rho_dt2"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n_t, n_x):
                raise ValueError(f"{name} has shape {arr.shape}, expected {(n_t, n_x)}")
            setattr(self, name, arr)
        if self.n_electrons is None:
            self.n_electrons = float(np.round(self.grid.integrate(self.rho[0]), 8))

    def __len__(self):
        return len(self.times)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def electron_counts(self) -> np.ndarray:
        return self.grid.integrate(self.rho, axis=1)

    def window(self, start: int, stop: int) -> "DensityTrajectory":
        sl = slice(start, stop)
        return replace(
            self,
            times=self.times[sl],
            rho=self.rho[sl],
            drho_dt=self.drho_dt[sl],
            d2rho_dt2=self.d2rho_dt2[sl],
            meta=dict(self.meta),
        )

    def reversed(self) -> "DensityTrajectory":
        """The same density path traversed backwards in time."""
        t_end = self.times[-1] + self.times[0]
        return replace(
            self,
            times=t_end - self.times[::-1],
            rho=self.rho[::-1].copy(),
            drho_dt=-self.drho_dt[::-1],
            d2rho_dt2=self.d2rho_dt2[::-1].copy(),
            meta=dict(self.meta),
        )


def write_csv(traj: DensityTrajectory, path, quantity: str = "rho") -> Path:
    """One row per time: t followed by the chosen quantity at every grid point."""
    path = Path(path)
    data = getattr(traj, quantity)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i}" for i in range(traj.grid.n_points)])
        for t, row in zip(traj.times, data):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    return path


def read_csv(path, grid: Grid1D) -> tuple[np.ndarray, np.ndarray]:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if raw.shape[1] != grid.n_points + 1:
        raise ValueError(f"{path}: expected {grid.n_points + 1} columns, got {raw.shape[1]}")
    return raw[:, 0], raw[:, 1:]


def write_binary(traj: DensityTrajectory, path) -> Path:
    path = Path(path)
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        traj.grid.n_points,
        len(traj.times),
        traj.stride,
        traj.grid.dx,
        traj.dt,
        traj.grid.x0,
    )
    with path.open("wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<16s", traj.provenance.encode().ljust(16, b"\0")))
        fh.write(struct.pack("<d", float(traj.n_electrons)))
        for arr in (traj.times, traj.rho, traj.drho_dt, traj.d2rho_dt2):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def read_binary(path) -> DensityTrajectory:
    blob = Path(path).read_bytes()
    magic, version, n_x, n_t, stride, dx, _dt, x0 = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a density trajectory file")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = _HEADER.size
    (prov,) = struct.unpack_from("<16s", blob, off)
    off += 16
    (n_el,) = struct.unpack_from("<d", blob, off)
    off += 8
    arrays = []
    for count in (n_t, n_t * n_x, n_t * n_x, n_t * n_x):
        arrays.append(np.frombuffer(blob, dtype="<f8", count=count, offset=off).copy())
        off += 8 * count
    times, rho, drho, d2rho = arrays
    grid = Grid1D(n_x, dx, x0)
    return DensityTrajectory(
        grid,
        times,
        rho.reshape(n_t, n_x),
        drho.reshape(n_t, n_x),
        d2rho.reshape(n_t, n_x),
        provenance=prov.rstrip(b"\0").decode(),
        n_electrons=n_el,
        stride=stride,
    )
