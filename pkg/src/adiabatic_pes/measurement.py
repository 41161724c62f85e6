"""Finite-shot measurement emulation and reconstruction of smooth density series."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import make_interp_spline, make_lsq_spline
from scipy.ndimage import correlate1d

from .trajectory import DensityTrajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSpec:
    shots: int = 10000
    seed: int = 0
    model: str = "gaussian_binomial"

    def __post_init__(self):
        if int(self.shots) < 1:
            raise ValueError("shots must be >= 1")
        if self.model not in ("gaussian_binomial", "multinomial"):
            raise ValueError(f"unknown noise model {self.model!r}")


@dataclass(frozen=True)
class SmoothingSpec:
    lowess_window: int = 1000
    spline_degree: int = 4
    knot_stride: int = 300
    renormalize: bool = True

    def __post_init__(self):
        if self.lowess_window < self.spline_degree + 1:
            raise ValueError("lowess_window must be at least spline_degree + 1")
        if self.knot_stride < 1:
            raise ValueError("knot_stride must be >= 1")


def _point_generators(seed: int, n: int, stream: int = 0):
    """One independent generator per grid point so results do not depend on loop order."""
    children = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, stream]).spawn(n)
    return [np.random.default_rng(c) for c in children]


def apply_density_noise(rho_series, dx: float, n_electrons: float, spec: NoiseSpec) -> np.ndarray:
    """Add shot noise to every sample of a density time series.

    Densities are mapped to single-shot detection probabilities p = rho dx / N_e,
    perturbed by N(0, 1) * sqrt(p (1 - p) / shots), and mapped back.
    """
    rho_series = np.asarray(rho_series, dtype=float)
    p = rho_series * dx / n_electrons
    if spec.model == "multinomial":
        rng = np.random.default_rng(spec.seed)
        probs = np.clip(p, 0.0, None)
        probs = probs / probs.sum(axis=-1, keepdims=True)
        counts = np.array([rng.multinomial(spec.shots, row) for row in probs.reshape(-1, p.shape[-1])])
        noisy = counts.reshape(p.shape) / spec.shots
        return noisy * n_electrons / dx
    var_arg = p * (1.0 - p)
    bad = (var_arg < 0.0) | (var_arg > 0.25 + 1e-15)
    if np.any(bad):
        log.warning("%d samples outside the [0, 1] probability range; variance clamped", int(bad.sum()))
    sigma = np.sqrt(np.clip(var_arg, 0.0, 1.0) / spec.shots)
    gens = _point_generators(spec.seed, p.shape[-1])
    flat = p.reshape(-1, p.shape[-1])
    g = np.stack([gen.standard_normal(flat.shape[0]) for gen in gens], axis=1)
    noisy = p + g.reshape(p.shape) * sigma
    return noisy * n_electrons / dx


def apply_rdm_noise(rdm, dx: float, n_electrons: float, spec: NoiseSpec, diagonal=None) -> np.ndarray:
    """Perturb off-diagonal one-RDM elements with shot noise; the diagonal is replaced by ``diagonal``.

    Elements are scaled to probabilities m = gamma dx / N_e, the noise is
    N(0, 1) * sqrt(|(1 - m) m| / shots), and the result is made Hermitian.
    """
    rdm = np.asarray(rdm, dtype=complex)
    m = rdm * dx / n_electrons
    n = m.shape[-1]
    gens = _point_generators(spec.seed, n, stream=1)
    g = np.stack([gen.standard_normal(m.size // n) for gen in gens], axis=-1).reshape(m.shape)
    sigma = np.sqrt(np.abs((1.0 - m) * m) / spec.shots)
    noisy = m + g * sigma
    noisy = 0.5 * (noisy + np.swapaxes(noisy.conj(), -1, -2))
    out = noisy * n_electrons / dx
    idx = np.arange(n)
    out[..., idx, idx] = np.diagonal(rdm, axis1=-2, axis2=-1) if diagonal is None else diagonal
    return out


def lowess_smooth(series, window: int) -> np.ndarray:
    """Local linear regression with tricube weights along axis 0.

    The kernel spans ``window`` samples centred on each point; near the ends
    the window is truncated rather than shifted. Linear in the input.
    """
    y = np.asarray(series, dtype=float)
    n = y.shape[0]
    if n < window:
        raise ValueError(f"series length {n} shorter than window {window}")
    half = window / 2.0
    reach = int(np.ceil(half)) - 1 if float(half).is_integer() else int(np.floor(half))
    d = np.arange(-reach, reach + 1, dtype=float)
    w = (1.0 - np.abs(d / half) ** 3) ** 3

    def corr(a, weights):
        return correlate1d(a, weights, axis=0, mode="constant", cval=0.0)

    ones = np.ones(n)
    # sums over the truncated window of w, w*d, w*d^2 with d = j - i
    s0 = corr(ones, w)
    s1 = corr(ones, w * d)
    s2 = corr(ones, w * d * d)
    t0 = corr(y, w)
    t1 = corr(y, w * d)
    shape = (n,) + (1,) * (y.ndim - 1)
    s0, s1, s2 = s0.reshape(shape), s1.reshape(shape), s2.reshape(shape)
    return (s2 * t0 - s1 * t1) / (s0 * s2 - s1 * s1)


def _knots(times: np.ndarray, stride: int) -> np.ndarray:
    idx = np.arange(0, len(times), stride)
    if idx[-1] != len(times) - 1:
        idx = np.append(idx, len(times) - 1)
    return times[idx]


def spline_fit_derivatives(times, series, knot_stride: int = 300, degree: int = 4, eval_times=None):
    """Least-squares B-spline per grid point with knots every ``knot_stride`` samples.

    Returns (value, first derivative, second derivative) at ``eval_times``
    (defaults to ``times``).
    """
    times = np.asarray(times, dtype=float)
    y = np.asarray(series, dtype=float)
    knots = _knots(times, knot_stride)
    if len(knots) < degree + 1:
        raise ValueError(f"{len(knots)} knots cannot support a degree-{degree} spline")
    t = np.concatenate([[knots[0]] * degree, knots, [knots[-1]] * degree])
    spl = make_lsq_spline(times, y, t, k=degree, axis=0)
    ev = times if eval_times is None else np.asarray(eval_times, float)
    return spl(ev), spl(ev, 1), spl(ev, 2)


def spline_interpolate_derivatives(sample_times, samples, eval_times, degree: int = 4):
    """Interpolating B-spline through sparse samples with its first two derivatives."""
    sample_times = np.asarray(sample_times, dtype=float)
    if len(sample_times) < degree + 1:
        raise ValueError(f"{len(sample_times)} samples cannot support a degree-{degree} spline")
    spl = make_interp_spline(sample_times, np.asarray(samples, float), k=degree, axis=0)
    ev = np.asarray(eval_times, float)
    return spl(ev), spl(ev, 1), spl(ev, 2)


def renormalize_density(series, n_electrons: float, dx: float) -> np.ndarray:
    """Scale each time slice so that dx * sum(rho) == n_electrons."""
    series = np.array(series, dtype=float)
    totals = dx * series.sum(axis=-1)
    bad = totals <= 0.0
    if np.any(bad):
        log.warning("%d slices with nonpositive electron count left unscaled", int(bad.sum()))
    scale = np.where(bad, 1.0, n_electrons / np.where(bad, 1.0, totals))
    return series * scale[..., None]


def smoothed_trajectory(noisy: DensityTrajectory, spec: SmoothingSpec) -> DensityTrajectory:
    """LOWESS, optional renormalization, then spline value and derivatives on the same mesh."""
    smooth = lowess_smooth(noisy.rho, spec.lowess_window)
    if spec.renormalize:
        smooth = renormalize_density(smooth, noisy.n_electrons, noisy.grid.dx)
    rho, d1, d2 = spline_fit_derivatives(noisy.times, smooth, spec.knot_stride, spec.spline_degree)
    return DensityTrajectory(
        noisy.grid, noisy.times, rho, d1, d2, provenance="smoothed",
        n_electrons=noisy.n_electrons, stride=noisy.stride,
    )


def noisy_trajectory(exact: DensityTrajectory, spec: NoiseSpec) -> DensityTrajectory:
    """Noisy copy of the densities; derivatives are not observable and are zeroed."""
    rho = apply_density_noise(exact.rho, exact.grid.dx, exact.n_electrons, spec)
    zeros = np.zeros_like(rho)
    return DensityTrajectory(
        exact.grid, exact.times, rho, zeros, zeros, provenance="sampled",
        n_electrons=exact.n_electrons, stride=exact.stride,
    )


def sparse_spline_trajectory(exact: DensityTrajectory, sample_stride: int, degree: int = 4) -> DensityTrajectory:
    """Keep every ``sample_stride``-th density and rebuild the full mesh by spline interpolation."""
    idx = np.arange(0, len(exact), sample_stride)
    if idx[-1] != len(exact) - 1:
        raise ValueError("sample stride must land on the final time")
    rho, d1, d2 = spline_interpolate_derivatives(exact.times[idx], exact.rho[idx], exact.times, degree)
    return DensityTrajectory(
        exact.grid, exact.times, rho, d1, d2, provenance="sampled",
        n_electrons=exact.n_electrons, stride=exact.stride,
        meta={"n_samples": len(idx), "sample_stride": sample_stride},
    )
