"""Kohn-Sham potential inversion: static (initial orbitals) and time-dependent.

Orbitals are stored as rows of an (n_orb, N) array normalized with
dx * sum(|phi|**2) == 1. Potentials live on the grid and are gauge-fixed to
zero mean.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid1D, apply_kinetic, apply_kinetic_power, kinetic_matrix

log = logging.getLogger(__name__)

OCCUPATIONS = {"singlet": (2.0,), "triplet": (1.0, 1.0)}


def occupations_for(kind: str | int) -> tuple[float, ...]:
    """Occupation list for a closed-shell singlet, a triplet, or n same-spin electrons."""
    if isinstance(kind, (int, np.integer)):
        return (1.0,) * int(kind)
    return OCCUPATIONS[kind]


def gauge_fix(v: np.ndarray) -> np.ndarray:
    return v - np.mean(v)


@dataclass
class KSSystem:
    grid: Grid1D
    orbitals: np.ndarray
    occupations: tuple
    v_ks: np.ndarray
    spin_channel: str = "restricted"
    converged: bool = True
    residual: float = 0.0

    def __post_init__(self):
        self.orbitals = np.atleast_2d(np.asarray(self.orbitals))
        self.occupations = tuple(float(f) for f in self.occupations)
        if len(self.occupations) != self.orbitals.shape[0]:
            raise ValueError("one occupation per orbital required")

    @property
    def n_electrons(self) -> float:
        return float(sum(self.occupations))

    def density(self) -> np.ndarray:
        return ks_density(self.orbitals, self.occupations)

    def overlap_matrix(self) -> np.ndarray:
        return self.grid.dx * self.orbitals.conj() @ self.orbitals.T


def ks_density(orbitals: np.ndarray, occupations) -> np.ndarray:
    f = np.asarray(occupations, dtype=float)[:, None]
    return np.sum(f * np.abs(orbitals) ** 2, axis=0)


def ks_kinetic_energy(orbitals: np.ndarray, occupations, grid: Grid1D) -> float:
    """sum_i f_i <phi_i|T|phi_i>."""
    tphi = apply_kinetic(orbitals, grid, axis=1)
    per = grid.dx * np.sum(orbitals.conj() * tphi, axis=1).real
    return float(np.dot(occupations, per))


def ks_density_first_derivative(orbitals: np.ndarray, occupations, grid: Grid1D) -> np.ndarray:
    """d rho_KS/dt = 2 sum_i f_i Im[phi_i* (T phi_i)] (the potential drops out)."""
    tphi = apply_kinetic(orbitals, grid, axis=1)
    f = np.asarray(occupations, dtype=float)[:, None]
    return 2.0 * np.sum(f * (orbitals.conj() * tphi).imag, axis=0)


def solve_ks(v_total: np.ndarray, grid: Grid1D, n_states: int | None = None, tmat=None):
    """Eigenpairs of T + v_total; orbitals normalized with dx quadrature."""
    if tmat is None:
        tmat = kinetic_matrix(grid)
    h = tmat + np.diag(v_total)
    eps, u = np.linalg.eigh(h)
    if n_states is not None:
        eps, u = eps[:n_states], u[:, :n_states]
    # deterministic sign: largest-magnitude component positive
    signs = np.sign(u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])])
    u = u * signs
    return eps, (u / np.sqrt(grid.dx)).T


# --------------------------------------------------------------------------
# static inversion from the one-body reduced density matrix
# --------------------------------------------------------------------------


class InitialInversionObjective:
    """Convex objective whose stationary point gives the KS potential for a target density.

    value(v) = Tr[(T + v_ext + v) D] - sum_i f_i eps_i(v), D = dx * gamma.
    Its gradient with respect to v_j is dx * (rho_target_j - rho_KS_j).
    """

    def __init__(self, grid: Grid1D, target_rdm: np.ndarray, v_ext: np.ndarray, occupations):
        self.grid = grid
        self.tmat = kinetic_matrix(grid)
        self.dmat = grid.dx * np.asarray(target_rdm)
        self.rho_target = np.diagonal(np.asarray(target_rdm)).real.copy()
        self.v_ext = np.asarray(v_ext, dtype=float)
        self.occ = np.asarray(occupations, dtype=float)
        self._t_trace = float(np.sum(self.tmat * self.dmat.T).real)

    def _eig(self, v):
        h = self.tmat + np.diag(self.v_ext + v)
        return np.linalg.eigh(h)

    def value(self, v: np.ndarray) -> float:
        eps, _ = self._eig(v)
        n = len(self.occ)
        pot = np.dot(self.v_ext + v, np.diagonal(self.dmat).real)
        return self._t_trace + pot - float(np.dot(self.occ, eps[:n]))

    def gradient(self, v: np.ndarray) -> np.ndarray:
        """rho_target - rho_KS, i.e. the true gradient divided by dx."""
        _, u = self._eig(v)
        n = len(self.occ)
        rho_ks = np.sum(self.occ[None, :] * u[:, :n] ** 2, axis=1) / self.grid.dx
        return self.rho_target - rho_ks

    def hessian(self, v: np.ndarray, eig=None) -> np.ndarray:
        """Second derivative of value(v): minus the static KS density response (x dx)."""
        eps, u = eig if eig is not None else self._eig(v)
        f = np.zeros(len(eps))
        f[: len(self.occ)] = self.occ
        chi = np.zeros((len(eps), len(eps)))
        n_occ = len(self.occ)
        for i in range(n_occ):
            for a in range(i + 1, len(eps)):
                df = f[i] - f[a]
                if df == 0.0:
                    continue
                pair = u[:, i] * u[:, a]
                chi += 2.0 * df / (eps[i] - eps[a]) * np.outer(pair, pair)
        return -chi


def initial_inversion(
    target_rho: np.ndarray,
    target_rdm: np.ndarray | None,
    v_ext: np.ndarray,
    occupations,
    grid: Grid1D,
    tol: float = 1e-8,
    max_iter: int = 200,
    v_guess: np.ndarray | None = None,
    spin_channel: str = "restricted",
) -> KSSystem:
    """Minimize the orbital objective over v_KS with damped Newton steps.

    When ``target_rdm`` is None a diagonal RDM built from ``target_rho`` is used;
    the off-diagonal part shifts the objective by a constant only.
    """
    target_rho = np.asarray(target_rho, dtype=float)
    if target_rdm is None:
        target_rdm = np.diag(target_rho)
    else:
        target_rdm = np.array(target_rdm, dtype=complex)
        target_rdm[np.diag_indices_from(target_rdm)] = target_rho
    obj = InitialInversionObjective(grid, target_rdm, v_ext, occupations)
    n_occ = len(obj.occ)

    v = np.zeros(grid.n_points) if v_guess is None else gauge_fix(np.asarray(v_guess, float))
    if v_guess is None and n_occ == 1 and np.all(target_rho > 0):
        # single orbital: phi = sqrt(rho / f) fixes v up to a constant
        phi = np.sqrt(target_rho / obj.occ[0])
        v = gauge_fix(-(obj.tmat @ phi) / phi - obj.v_ext)
    value = obj.value(v)
    best = (np.inf, v)
    converged = False
    damping = None
    for it in range(max_iter):
        eig = obj._eig(v)
        u = eig[1]
        rho_ks = np.sum(obj.occ[None, :] * u[:, :n_occ] ** 2, axis=1) / grid.dx
        grad = obj.rho_target - rho_ks
        gmax = float(np.max(np.abs(grad)))
        if gmax < best[0]:
            best = (gmax, v.copy())
        if gmax < tol:
            converged = True
            break
        # Levenberg-Marquardt: the damping keeps Newton from overshooting where
        # the target density (and hence the curvature) is tiny
        w, q = np.linalg.eigh(obj.hessian(v, eig) / grid.dx)
        gq = q.T @ grad
        if damping is None:
            damping = 1e-8 * w[-1]
        for _ in range(60):
            step = gauge_fix(-(q @ (gq / (np.abs(w) + damping))))
            trial = gauge_fix(v + step)
            trial_value = obj.value(trial)
            if trial_value < value + 1e-4 * grid.dx * np.dot(grad, step):
                damping = max(damping / 3.0, 1e-14 * w[-1])
                break
            damping *= 4.0
        else:
            log.warning("damped Newton stalled at iteration %d, |grad|=%.2e", it, gmax)
            break
        v, value = trial, trial_value
    gmax, v = best
    eps, orbitals = solve_ks(obj.v_ext + v, grid, n_occ, obj.tmat)
    if not converged:
        log.warning("initial inversion not converged: max density residual %.2e", gmax)
    return KSSystem(grid, orbitals.astype(complex), tuple(obj.occ), v, spin_channel, converged, gmax)


# --------------------------------------------------------------------------
# time-dependent inversion through the density second derivative
# --------------------------------------------------------------------------


@dataclass
class ForceBalanceResult:
    v_total: np.ndarray
    condition: float
    ill_conditioned: bool


class ForceBalanceSolver:
    """Solve for the potential that gives KS orbitals a prescribed d^2 rho / dt^2.

    For H = T + v on the grid,
        d2rho(x) = q(x) - sum_y K(x, y) [v(y) - v(x)],
        K(x, y)  = 2 sum_i f_i Re[phi_i*(x) phi_i(y)] T_xy,
        q(x)     = 2 sum_i f_i (|T phi_i|^2 - Re[phi_i* T^2 phi_i])(x).
    The system matrix is symmetric with the constant vector in its null space.
    """

    def __init__(self, grid: Grid1D, regularization: float = 1e-12, condition_limit: float = 1e14):
        self.grid = grid
        self.tmat = kinetic_matrix(grid)
        self.regularization = regularization
        self.condition_limit = condition_limit

    def system(self, orbitals: np.ndarray, occupations):
        f = np.asarray(occupations, dtype=float)
        overlap = np.einsum("i,ix,iy->xy", f, orbitals.conj(), orbitals).real
        kmat = 2.0 * overlap * self.tmat
        amat = kmat - np.diag(kmat.sum(axis=1))
        tphi = apply_kinetic(orbitals, self.grid, axis=1)
        ttphi = apply_kinetic_power(orbitals, self.grid, 2, axis=1)
        q = 2.0 * np.sum(f[:, None] * (np.abs(tphi) ** 2 - (orbitals.conj() * ttphi).real), axis=0)
        return amat, q

    def residual(self, orbitals, occupations, v, d2rho_target) -> np.ndarray:
        amat, q = self.system(orbitals, occupations)
        return amat @ v - (q - d2rho_target)

    def solve(self, orbitals, occupations, d2rho_target, v_ref=None) -> ForceBalanceResult:
        """Tikhonov-filtered solve; poorly determined modes are pulled toward ``v_ref`` (default 0)."""
        amat, q = self.system(orbitals, occupations)
        w, u = np.linalg.eigh(0.5 * (amat + amat.T))
        scale = np.max(np.abs(w))
        mu2 = (self.regularization * scale) ** 2
        rhs = q - d2rho_target
        base = np.zeros(len(rhs)) if v_ref is None else gauge_fix(np.asarray(v_ref, dtype=float))
        coeff = u.T @ (rhs - amat @ base)
        v = base + u @ (w * coeff / (w**2 + mu2))
        mags = np.sort(np.abs(w))
        cond = float(scale / mags[1]) if mags[1] > 0 else np.inf
        return ForceBalanceResult(gauge_fix(v), cond, cond > self.condition_limit)


def force_balance_invert(ks: KSSystem, d2rho_target: np.ndarray, solver=None) -> np.ndarray:
    """Total potential (v_ext + v_KS, zero mean) reproducing d2rho_target."""
    solver = solver or ForceBalanceSolver(ks.grid)
    return solver.solve(ks.orbitals, ks.occupations, d2rho_target).v_total


def ks_split_step(orbitals: np.ndarray, v: np.ndarray, grid: Grid1D, dt: float) -> np.ndarray:
    half = np.exp(-0.5j * dt * grid.kinetic_diagonal)[None, :]
    out = np.fft.ifft(half * np.fft.fft(orbitals, axis=1), axis=1)
    out *= np.exp(-1j * dt * v)[None, :]
    return np.fft.ifft(half * np.fft.fft(out, axis=1), axis=1)


def ks_exact_step(orbitals: np.ndarray, v: np.ndarray, grid: Grid1D, dt: float, tmat=None) -> np.ndarray:
    """exp(-i (T + v) dt) applied through a dense eigendecomposition."""
    if tmat is None:
        tmat = kinetic_matrix(grid)
    eps, u = np.linalg.eigh(tmat + np.diag(v))
    prop = (u * np.exp(-1j * dt * eps)) @ u.T
    return orbitals @ prop.T


def ks_selfcheck(v_ks, v_ext, occupations, rho_target, grid: Grid1D, tmat=None):
    """Ground-state KS density for v_ext + v_ks and its L2 distance to rho_target."""
    _, orb = solve_ks(np.asarray(v_ext) + np.asarray(v_ks), grid, len(occupations), tmat)
    rho_tilde = ks_density(orb, occupations)
    err = float(np.sqrt(grid.dx * np.sum((np.asarray(rho_target) - rho_tilde) ** 2)))
    return rho_tilde, err


@dataclass
class InversionSettings:
    regularization: float = 1e-12
    predictor: bool = True
    propagator: str = "exact"
    # feedback gains pulling rho_KS and its rate back onto the target
    feedback_rho: float = 100.0
    feedback_rate: float = 20.0
    # where weakly determined potential modes are pulled by the regularization
    prior: str = "zero"
    drift_threshold: float = 1e-2
    selfcheck_stride: int = 1
    snapshot_stride: int = 0


@dataclass
class InversionRun:
    times: np.ndarray
    v_ks: np.ndarray
    t_s: np.ndarray
    density_deviation: np.ndarray
    density_error: np.ndarray
    selfcheck_times: np.ndarray
    orbital_snapshots: dict
    final: KSSystem
    flagged_windows: list = field(default_factory=list)
    max_condition: float = 0.0
    orthonormality_error: float = 0.0


def ks_trajectory_inversion(
    initial: KSSystem,
    trajectory,
    v_ext_fn,
    settings: InversionSettings | None = None,
) -> InversionRun:
    """Invert a density trajectory into v_KS(t) while co-propagating the KS orbitals.

    ``v_ext_fn(t)`` returns the external potential on the grid at time t.
    """
    settings = settings or InversionSettings()
    if settings.propagator not in ("split", "exact"):
        raise ValueError(f"unknown KS propagator {settings.propagator!r}")
    if settings.prior not in ("zero", "initial"):
        raise ValueError(f"unknown regularization prior {settings.prior!r}")
    grid = initial.grid
    dt = trajectory.dt
    solver = ForceBalanceSolver(grid, settings.regularization)
    tmat = solver.tmat
    occ = initial.occupations
    orbitals = np.array(initial.orbitals, dtype=complex)
    n_t = len(trajectory)
    n_x = grid.n_points

    v_ks = np.empty((n_t, n_x))
    t_s = np.empty(n_t)
    deviation = np.empty(n_t)
    check_idx = np.arange(0, n_t, max(settings.selfcheck_stride, 1))
    if check_idx[-1] != n_t - 1:
        check_idx = np.append(check_idx, n_t - 1)
    check_set = set(check_idx.tolist())
    density_error = []
    snapshots = {}
    flagged = []
    in_flag = None
    max_cond = 0.0
    v_prev = None
    for n in range(n_t):
        t = trajectory.times[n]
        v_ext = v_ext_fn(t)
        rho_ks = ks_density(orbitals, occ)
        target = trajectory.d2rho_dt2[n]
        if settings.feedback_rho or settings.feedback_rate:
            rate_ks = ks_density_first_derivative(orbitals, occ, grid)
            target = (
                target
                + settings.feedback_rho * (trajectory.rho[n] - rho_ks)
                + settings.feedback_rate * (trajectory.drho_dt[n] - rate_ks)
            )
        v_ref = v_ext + initial.v_ks if settings.prior == "initial" else None
        fb = solver.solve(orbitals, occ, target, v_ref)
        if not np.all(np.isfinite(fb.v_total)):
            raise FloatingPointError(f"non-finite potential at t={t}")
        max_cond = max(max_cond, fb.condition)
        v_tot = fb.v_total
        v_ks[n] = gauge_fix(v_tot - v_ext)
        t_s[n] = ks_kinetic_energy(orbitals, occ, grid)
        deviation[n] = np.sqrt(grid.dx * np.sum((rho_ks - trajectory.rho[n]) ** 2))
        if deviation[n] > settings.drift_threshold:
            if in_flag is None:
                in_flag = t
        elif in_flag is not None:
            flagged.append((in_flag, t))
            in_flag = None
        if n in check_set:
            density_error.append(ks_selfcheck(v_ks[n], v_ext, occ, trajectory.rho[n], grid, tmat)[1])
        if settings.snapshot_stride and n % settings.snapshot_stride == 0:
            snapshots[float(t)] = orbitals.copy()
        if n < n_t - 1:
            v_step = v_tot
            if settings.predictor and v_prev is not None:
                v_step = v_tot + 0.5 * (v_tot - v_prev)
            if settings.propagator == "exact":
                orbitals = ks_exact_step(orbitals, v_step, grid, dt, tmat)
            else:
                orbitals = ks_split_step(orbitals, v_step, grid, dt)
            v_prev = v_tot
    if in_flag is not None:
        flagged.append((in_flag, float(trajectory.times[-1])))
    final = KSSystem(grid, orbitals, occ, v_ks[-1], initial.spin_channel)
    ortho = float(np.max(np.abs(final.overlap_matrix() - np.eye(len(occ)))))
    return InversionRun(
        times=trajectory.times.copy(),
        v_ks=v_ks,
        t_s=t_s,
        density_deviation=deviation,
        density_error=np.asarray(density_error),
        selfcheck_times=trajectory.times[check_idx],
        orbital_snapshots=snapshots,
        final=final,
        flagged_windows=flagged,
        max_condition=max_cond,
        orthonormality_error=ortho,
    )
