"""Exact first-quantized two-electron engine on a Fourier grid.

The wavefunction is stored as an (N, N) array psi[x1, x2] normalized so that
dx**2 * sum(|psi|**2) == 1. Singlets are spatially symmetric, triplets (both
spins up) antisymmetric.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .grid import Grid1D, kinetic_matrix
from .systems import Schedule, external_potential, interaction_matrix
from .trajectory import DensityTrajectory

log = logging.getLogger(__name__)

SYMMETRY_SIGN = {"singlet": 1.0, "triplet": -1.0}


class ConvergenceError(RuntimeError):
    pass


class PropagationError(RuntimeError):
    pass


@dataclass
class TwoElectronState:
    grid: Grid1D
    amplitudes: np.ndarray
    symmetry: str = "singlet"

    def __post_init__(self):
        if self.symmetry not in SYMMETRY_SIGN:
            raise ValueError(f"symmetry must be 'singlet' or 'triplet', got {self.symmetry!r}")
        n = self.grid.n_points
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (n, n):
            raise ValueError(f"amplitudes must be ({n}, {n})")

    @property
    def sign(self) -> float:
        return SYMMETRY_SIGN[self.symmetry]

    def norm(self) -> float:
        return float(np.sqrt(self.grid.dx**2 * np.sum(np.abs(self.amplitudes) ** 2)))

    def symmetry_residual(self) -> float:
        a = self.amplitudes
        return float(np.max(np.abs(a - self.sign * a.T)))

    def symmetrize(self) -> "TwoElectronState":
        a = self.amplitudes
        self.amplitudes = 0.5 * (a + self.sign * a.T)
        return self

    def overlap(self, other: "TwoElectronState") -> complex:
        return self.grid.dx**2 * np.vdot(self.amplitudes, other.amplitudes)


class TwoElectronHamiltonian:
    """H = T1 + T2 + v(x1) + v(x2) + W(x1, x2), applied on grid arrays."""

    def __init__(self, system, grid: Grid1D):
        self.system = system
        self.grid = grid
        self.w = interaction_matrix(system, grid)
        self._tdiag = grid.kinetic_diagonal[:, None] + grid.kinetic_diagonal[None, :]

    def kinetic(self, psi: np.ndarray) -> np.ndarray:
        return np.fft.ifft2(self._tdiag * np.fft.fft2(psi))

    def potential(self, v_ext: np.ndarray) -> np.ndarray:
        return v_ext[:, None] + v_ext[None, :] + self.w

    def apply(self, psi: np.ndarray, v_ext: np.ndarray) -> np.ndarray:
        return self.kinetic(psi) + self.potential(v_ext) * psi

    def dense(self, v_ext: np.ndarray) -> np.ndarray:
        """Full N^2 x N^2 matrix, row index x1 * N + x2."""
        n = self.grid.n_points
        t = kinetic_matrix(self.grid)
        eye = np.eye(n)
        h = np.kron(t, eye) + np.kron(eye, t)
        h[np.diag_indices_from(h)] += self.potential(v_ext).ravel()
        return h


class _SectorBasis:
    """Orthonormal basis of the exchange-symmetric or antisymmetric pair space."""

    def __init__(self, n: int, sign: float):
        self.n = n
        self.sign = sign
        self.iu = np.triu_indices(n, k=1)
        self.diag = sign > 0
        self.dim = len(self.iu[0]) + (n if self.diag else 0)

    def expand(self, c: np.ndarray) -> np.ndarray:
        n, m = self.n, len(self.iu[0])
        psi = np.zeros((n, n), dtype=c.dtype)
        psi[self.iu] = c[:m] / np.sqrt(2.0)
        psi[self.iu[1], self.iu[0]] = self.sign * c[:m] / np.sqrt(2.0)
        if self.diag:
            psi[np.diag_indices(n)] = c[m:]
        return psi

    def project(self, psi: np.ndarray) -> np.ndarray:
        off = (psi[self.iu] + self.sign * psi[self.iu[1], self.iu[0]]) / np.sqrt(2.0)
        if self.diag:
            return np.concatenate([off, np.diagonal(psi)])
        return off

    def matrix(self) -> np.ndarray:
        eye = np.eye(self.dim)
        return np.stack([self.expand(eye[i]).ravel() for i in range(self.dim)], axis=1)


def _sector_lowest(ham, v_ext, sign, method, guess=None, tol=1e-9):
    grid = ham.grid
    basis = _SectorBasis(grid.n_points, sign)
    if method == "dense":
        b = basis.matrix()
        hred = b.T @ ham.dense(v_ext) @ b
        w, u = np.linalg.eigh(0.5 * (hred + hred.T))
        return w[0], basis.expand(u[:, 0])
    if method != "lanczos":
        raise ValueError(f"unknown eigensolver {method!r}")

    def matvec(c):
        c = np.asarray(c).ravel()
        return basis.project(ham.apply(basis.expand(c), v_ext).real)

    op = LinearOperator((basis.dim, basis.dim), matvec=matvec, dtype=float)
    if guess is not None:
        v0 = basis.project(np.asarray(guess).real)
    else:
        # fixed start vector keeps repeated solves bit-reproducible
        v0 = np.ones(basis.dim)
    w, u = eigsh(op, k=1, which="SA", v0=v0, tol=1e-14, ncv=min(basis.dim, 40))
    c = u[:, 0]
    residual = np.linalg.norm(matvec(c) - w[0] * c)
    if residual > tol:
        log.warning("Lanczos residual %.2e above %.1e, falling back to dense", residual, tol)
        return _sector_lowest(ham, v_ext, sign, "dense")
    return w[0], basis.expand(c)


def ground_state(
    system,
    grid: Grid1D,
    param: float | None = None,
    symmetry: str = "singlet",
    v_ext: np.ndarray | None = None,
    method: str = "lanczos",
    guess: np.ndarray | None = None,
) -> tuple[TwoElectronState, float]:
    """Lowest eigenstate within one exchange-symmetry sector.

    Either ``param`` (R or omega) or an explicit ``v_ext`` array must be given.
    """
    if v_ext is None:
        if param is None:
            raise ValueError("need param or v_ext")
        v_ext = system.v_ext(grid.x, param)
    ham = TwoElectronHamiltonian(system, grid)
    sign = SYMMETRY_SIGN[symmetry]
    energy, vec = _sector_lowest(ham, np.asarray(v_ext, float), sign, method, guess)
    # fix the global sign so the largest component is positive
    vec = vec * np.sign(vec.ravel()[np.argmax(np.abs(vec))])
    state = TwoElectronState(grid, vec / grid.dx, symmetry)
    residual = np.linalg.norm(ham.apply(vec, v_ext) - energy * vec)
    if residual > 1e-8:
        raise ConvergenceError(f"ground state residual {residual:.2e}")
    return state.symmetrize(), float(energy)


def energy_expectation(state: TwoElectronState, ham: TwoElectronHamiltonian, v_ext) -> float:
    psi = state.amplitudes
    return float((state.grid.dx**2 * np.vdot(psi, ham.apply(psi, v_ext))).real)


def density(state: TwoElectronState) -> np.ndarray:
    """rho(x) = 2 dx sum_x2 |psi(x, x2)|^2."""
    return 2.0 * state.grid.dx * np.sum(np.abs(state.amplitudes) ** 2, axis=1)


def one_rdm(state: TwoElectronState) -> np.ndarray:
    """Spin-summed gamma(x, x') = 2 dx sum_x2 psi(x, x2) psi*(x', x2)."""
    psi = state.amplitudes
    return 2.0 * state.grid.dx * psi @ psi.conj().T


def density_first_derivative(state: TwoElectronState, ham: TwoElectronHamiltonian, v_ext):
    """d rho / dt = 4 dx sum_x2 Im[psi* (H psi)]."""
    psi = state.amplitudes
    hpsi = ham.apply(psi, v_ext)
    return 4.0 * state.grid.dx * np.sum((psi.conj() * hpsi).imag, axis=1)


def density_second_derivative(state: TwoElectronState, ham: TwoElectronHamiltonian, v_ext):
    """d^2 rho / dt^2 = -<[[n(x), H], H]> from two applications of H."""
    psi = state.amplitudes
    hpsi = ham.apply(psi, v_ext)
    hhpsi = ham.apply(hpsi, v_ext)
    integrand = np.abs(hpsi) ** 2 - (psi.conj() * hhpsi).real
    return 4.0 * state.grid.dx * np.sum(integrand, axis=1)


class SplitOperatorPropagator:
    """Strang splitting: half kinetic, full potential, half kinetic."""

    def __init__(self, ham: TwoElectronHamiltonian, dt: float):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.ham = ham
        self.dt = dt
        self._half_kin = np.exp(-0.5j * dt * ham._tdiag)

    def step(self, state: TwoElectronState, v_mid: np.ndarray) -> TwoElectronState:
        psi = np.fft.ifft2(self._half_kin * np.fft.fft2(state.amplitudes))
        psi *= np.exp(-1j * self.dt * self.ham.potential(v_mid))
        psi = np.fft.ifft2(self._half_kin * np.fft.fft2(psi))
        return TwoElectronState(state.grid, psi, state.symmetry).symmetrize()


def propagate_step(state, t, dt, system, schedule: Schedule, propagator=None):
    """One split-operator step from t to t + dt with v_ext at the midpoint time."""
    if propagator is None:
        propagator = SplitOperatorPropagator(TwoElectronHamiltonian(system, state.grid), dt)
    v_mid = external_potential(system, schedule, t + 0.5 * dt, state.grid)
    return propagator.step(state, v_mid)


@dataclass
class AdiabaticRun:
    trajectory: DensityTrajectory
    final_state: TwoElectronState
    initial_state: TwoElectronState
    initial_energy: float
    rdms: dict
    norm_drift: float
    symmetry_residual: float


def adiabatic_run(
    system,
    grid: Grid1D,
    schedule: Schedule,
    dt: float,
    symmetry: str = "singlet",
    record_stride: int = 1,
    rdm_indices=(0,),
    initial_state: TwoElectronState | None = None,
    norm_tolerance: float = 1e-6,
) -> AdiabaticRun:
    """Evolve the sector ground state at t=0 along the schedule, recording densities.

    Records rho, its commutator first and second time derivatives at every
    ``record_stride`` steps (both ends included). One-RDMs are stored at the
    record indices listed in ``rdm_indices`` (negative indices allowed).
    """
    n_steps = int(round(schedule.total_time / dt))
    if abs(n_steps * dt - schedule.total_time) > 1e-9 * schedule.total_time:
        raise ValueError(f"dt={dt} does not divide total time {schedule.total_time}")
    if n_steps % record_stride:
        raise ValueError(f"record_stride={record_stride} does not divide {n_steps} steps")
    ham = TwoElectronHamiltonian(system, grid)
    if initial_state is None:
        v0 = external_potential(system, schedule, 0.0, grid)
        initial_state, e0 = ground_state(system, grid, symmetry=symmetry, v_ext=v0)
    else:
        e0 = energy_expectation(initial_state, ham, external_potential(system, schedule, 0.0, grid))
    prop = SplitOperatorPropagator(ham, dt)

    n_rec = n_steps // record_stride + 1
    rdm_set = {i % n_rec for i in rdm_indices}
    times = np.arange(n_rec) * record_stride * dt
    rho = np.empty((n_rec, grid.n_points))
    drho = np.empty_like(rho)
    d2rho = np.empty_like(rho)
    rdms = {}
    state = initial_state
    worst_norm = 0.0
    worst_sym = 0.0
    for step in range(n_steps + 1):
        t = step * dt
        if step % record_stride == 0:
            i = step // record_stride
            v_now = external_potential(system, schedule, t, grid)
            rho[i] = density(state)
            drho[i] = density_first_derivative(state, ham, v_now)
            d2rho[i] = density_second_derivative(state, ham, v_now)
            if i in rdm_set:
                rdms[i] = one_rdm(state)
            drift = abs(state.norm() - 1.0)
            worst_norm = max(worst_norm, drift)
            worst_sym = max(worst_sym, state.symmetry_residual())
            if drift > norm_tolerance:
                raise PropagationError(f"norm drift {drift:.2e} at t={t:.4f}")
        if step < n_steps:
            state = prop.step(state, external_potential(system, schedule, t + 0.5 * dt, grid))
    traj = DensityTrajectory(
        grid, times, rho, drho, d2rho, provenance="exact", n_electrons=2.0, stride=record_stride
    )
    return AdiabaticRun(traj, state, initial_state, e0, rdms, worst_norm, worst_sym)


def instantaneous_overlap(state: TwoElectronState, system, v_ext) -> float:
    """|<ground(v_ext)|state>|^2 within the state's symmetry sector."""
    gs, _ = ground_state(system, state.grid, symmetry=state.symmetry, v_ext=v_ext)
    return float(abs(gs.overlap(state)) ** 2)
