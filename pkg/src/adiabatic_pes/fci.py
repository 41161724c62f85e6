"""Second-quantized full-CI engine on the grid basis.

Determinants are (alpha string, beta string) pairs of occupation bitstrings;
coefficients are stored alpha-major, i.e. as a (n_alpha_strings, n_beta_strings)
matrix flattened row by row. Grid densities carry the 1/dx factor so that
dx * sum(rho_sigma) == n_sigma, matching the first-quantized engine.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from math import comb

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, eigsh

from .exact2e import ConvergenceError, PropagationError
from .grid import Grid1D, kinetic_matrix
from .systems import Schedule, external_potential, interaction_matrix
from .trajectory import DensityTrajectory

log = logging.getLogger(__name__)


def _strings(n_sites: int, n_elec: int) -> list[int]:
    return [sum(1 << p for p in occ) for occ in combinations(range(n_sites), n_elec)]


def _popcount_below(s: int, p: int) -> int:
    return bin(s & ((1 << p) - 1)).count("1")


class StringSpace:
    """All occupation strings of ``n_elec`` same-spin electrons on ``n_sites``."""

    def __init__(self, n_sites: int, n_elec: int):
        self.n_sites = n_sites
        self.n_elec = n_elec
        self.strings = _strings(n_sites, n_elec)
        self.index = {s: i for i, s in enumerate(self.strings)}
        self.occ = np.array(
            [[(s >> p) & 1 for p in range(n_sites)] for s in self.strings], dtype=float
        ).reshape(len(self.strings), n_sites)

    def __len__(self):
        return len(self.strings)

    @cached_property
    def excitations(self) -> list[tuple[int, int, int, int, int]]:
        """(target, source, p, q, sign) for every nonzero <target|a+_p a_q|source>."""
        out = []
        for i, s in enumerate(self.strings):
            for q in range(self.n_sites):
                if not (s >> q) & 1:
                    continue
                s1 = s ^ (1 << q)
                sign_q = -1 if _popcount_below(s, q) % 2 else 1
                for p in range(self.n_sites):
                    if (s1 >> p) & 1:
                        continue
                    s2 = s1 | (1 << p)
                    sign = sign_q * (-1 if _popcount_below(s1, p) % 2 else 1)
                    out.append((self.index[s2], i, p, q, sign))
        return out

    def one_body(self, h: np.ndarray) -> sp.csr_matrix:
        """Matrix of sum_pq h_pq a+_p a_q on this string space."""
        rows, cols, vals = [], [], []
        for tgt, src, p, q, sign in self.excitations:
            if h[p, q] != 0.0:
                rows.append(tgt)
                cols.append(src)
                vals.append(sign * h[p, q])
        n = len(self)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass(frozen=True)
class DeterminantBasis:
    n_sites: int
    n_alpha: int
    n_beta: int

    def __post_init__(self):
        if not (0 <= self.n_alpha <= self.n_sites and 0 <= self.n_beta <= self.n_sites):
            raise ValueError("electron counts must fit on the grid")

    @cached_property
    def alpha(self) -> StringSpace:
        return StringSpace(self.n_sites, self.n_alpha)

    @cached_property
    def beta(self) -> StringSpace:
        return StringSpace(self.n_sites, self.n_beta)

    @property
    def dim(self) -> int:
        return comb(self.n_sites, self.n_alpha) * comb(self.n_sites, self.n_beta)

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.alpha), len(self.beta))

    def determinants(self) -> list[tuple[int, int]]:
        return [(a, b) for a in self.alpha.strings for b in self.beta.strings]

    @property
    def s_z(self) -> float:
        return 0.5 * (self.n_alpha - self.n_beta)


@dataclass
class FCIState:
    basis: DeterminantBasis
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=complex).ravel()
        if self.coefficients.size != self.basis.dim:
            raise ValueError(f"expected {self.basis.dim} coefficients, got {self.coefficients.size}")

    @property
    def matrix(self) -> np.ndarray:
        return self.coefficients.reshape(self.basis.shape)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def overlap(self, other: "FCIState") -> complex:
        return complex(np.vdot(self.coefficients, other.coefficients))


class FCIHamiltonian:
    """H = sum_{pq,sigma} h_pq a+ a + sum_{p<q} W_pq n_p n_q + sum_p W_pp n_p,up n_p,down."""

    def __init__(self, system, grid: Grid1D, basis: DeterminantBasis, interaction_scale: float = 1.0):
        if basis.n_sites != grid.n_points:
            raise ValueError("basis and grid sizes differ")
        self.grid = grid
        self.basis = basis
        tmat = kinetic_matrix(grid)
        self.kin_alpha = basis.alpha.one_body(tmat)
        self.kin_beta = basis.beta.one_body(tmat)
        w = interaction_scale * interaction_matrix(system, grid)
        na, nb = basis.alpha.occ, basis.beta.occ
        # N_p = n_p,alpha + n_p,beta per determinant, shape (n_a, n_b, sites)
        n_tot = na[:, None, :] + nb[None, :, :]
        self.interaction = 0.5 * np.einsum("abp,pq,abq->ab", n_tot, w, n_tot) - 0.5 * np.einsum(
            "abp,p->ab", n_tot, np.diag(w)
        )
        self.occ_alpha = na
        self.occ_beta = nb

    def diagonal(self, v_ext: np.ndarray) -> np.ndarray:
        va = self.occ_alpha @ v_ext
        vb = self.occ_beta @ v_ext
        return self.interaction + va[:, None] + vb[None, :]

    def apply(self, c: np.ndarray, v_ext: np.ndarray) -> np.ndarray:
        c = np.asarray(c)
        if c.size != self.basis.dim:
            raise ValueError(f"vector of size {c.size} does not match basis dimension {self.basis.dim}")
        m = c.reshape(self.basis.shape)
        out = self.kin_alpha @ m + (self.kin_beta @ m.T).T + self.diagonal(v_ext) * m
        return out.ravel()

    def sparse(self, v_ext: np.ndarray) -> sp.csr_matrix:
        ia = sp.identity(len(self.basis.alpha), format="csr")
        ib = sp.identity(len(self.basis.beta), format="csr")
        h = sp.kron(self.kin_alpha, ib) + sp.kron(ia, self.kin_beta)
        return (h + sp.diags(self.diagonal(v_ext).ravel())).tocsr()


def hamiltonian_action(state, v_ext, ham: FCIHamiltonian) -> np.ndarray:
    coeffs = state.coefficients if isinstance(state, FCIState) else np.asarray(state)
    return ham.apply(coeffs, v_ext)


def ground_state_fci(
    ham: FCIHamiltonian, v_ext: np.ndarray, tol: float = 1e-9, guess: np.ndarray | None = None
) -> tuple[FCIState, float]:
    """Lowest eigenpair by Lanczos from a fixed start vector."""
    dim = ham.basis.dim
    if dim <= 400:
        w, u = np.linalg.eigh(ham.sparse(v_ext).toarray())
        energy, vec = w[0], u[:, 0]
    else:
        op = LinearOperator((dim, dim), matvec=lambda c: ham.apply(np.ravel(c), v_ext).real, dtype=float)
        v0 = np.ones(dim) if guess is None else np.asarray(guess).real
        w, u = eigsh(op, k=1, which="SA", v0=v0, tol=1e-14, ncv=min(dim, 40))
        energy, vec = w[0], u[:, 0]
    vec = vec * np.sign(vec[np.argmax(np.abs(vec))])
    residual = np.linalg.norm(ham.apply(vec, v_ext) - energy * vec)
    if residual > tol:
        raise ConvergenceError(f"FCI ground state residual {residual:.2e}")
    return FCIState(ham.basis, vec), float(energy)


def _lanczos_expm(matvec, v, dt, tol, max_dim):
    """exp(-i H dt) v in a Krylov space; returns (result, error estimate)."""
    beta0 = np.linalg.norm(v)
    basis = [v / beta0]
    alphas, betas = [], []
    for j in range(max_dim):
        w = matvec(basis[j])
        a = np.vdot(basis[j], w).real
        w = w - a * basis[j] - (betas[-1] * basis[j - 1] if j else 0.0)
        for b in basis:
            w = w - np.vdot(b, w) * b
        alphas.append(a)
        b_next = np.linalg.norm(w)
        m = len(alphas)
        tri = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
        small = scipy.linalg.expm(-1j * dt * tri)[:, 0]
        err = b_next * abs(small[-1])
        if err < tol or b_next < 1e-14 or m == max_dim:
            out = beta0 * (np.array(basis).T @ small)
            return out, err
        betas.append(b_next)
        basis.append(w / b_next)


def propagate_fci(
    state: FCIState,
    t: float,
    dt: float,
    ham: FCIHamiltonian,
    v_fn,
    tol: float = 1e-12,
    max_krylov: int = 30,
    _depth: int = 0,
) -> FCIState:
    """Short-iterative-Lanczos step with H frozen at the midpoint time."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    v_mid = v_fn(t + 0.5 * dt)
    out, err = _lanczos_expm(lambda c: ham.apply(c, v_mid), state.coefficients, dt, tol, max_krylov)
    if err > tol:
        if _depth > 6:
            raise PropagationError(f"Krylov step failed to converge (estimate {err:.2e})")
        log.info("Krylov estimate %.1e at dt=%g, halving", err, dt)
        half = propagate_fci(state, t, dt / 2, ham, v_fn, tol, max_krylov, _depth + 1)
        return propagate_fci(half, t + dt / 2, dt / 2, ham, v_fn, tol, max_krylov, _depth + 1)
    return FCIState(state.basis, out)


def _occ(basis: DeterminantBasis, sigma: str) -> np.ndarray:
    if sigma == "alpha":
        return np.broadcast_to(basis.alpha.occ[:, None, :], basis.shape + (basis.n_sites,))
    if sigma == "beta":
        return np.broadcast_to(basis.beta.occ[None, :, :], basis.shape + (basis.n_sites,))
    raise ValueError(f"sigma must be 'alpha' or 'beta', got {sigma!r}")


def spin_density(state: FCIState, sigma: str, dx: float = 1.0) -> np.ndarray:
    """<n_p,sigma> / dx on every grid point."""
    prob = np.abs(state.matrix) ** 2
    return np.einsum("ab,abp->p", prob, _occ(state.basis, sigma)) / dx


def spin_one_rdm(state: FCIState, sigma: str, dx: float = 1.0) -> np.ndarray:
    """gamma_sigma(x_p, x_q) = <a+_q,sigma a_p,sigma> / dx."""
    c = state.matrix
    if sigma == "alpha":
        space, pmat = state.basis.alpha, c @ c.conj().T
    elif sigma == "beta":
        space, pmat = state.basis.beta, c.T @ c.conj()
    else:
        raise ValueError(f"sigma must be 'alpha' or 'beta', got {sigma!r}")
    n = state.basis.n_sites
    expval = np.zeros((n, n), dtype=complex)
    for tgt, src, p, q, sign in space.excitations:
        expval[p, q] += sign * pmat[src, tgt]
    return expval.T / dx


def _raising_operator(basis: DeterminantBasis) -> sp.csr_matrix:
    """S+ = sum_p a+_p,alpha a_p,beta mapping into the (n_alpha+1, n_beta-1) sector."""
    target = DeterminantBasis(basis.n_sites, basis.n_alpha + 1, basis.n_beta - 1)
    rows, cols, vals = [], [], []
    nb_t = len(target.beta)
    nb = len(basis.beta)
    for ia, sa in enumerate(basis.alpha.strings):
        for ib, sb in enumerate(basis.beta.strings):
            for p in range(basis.n_sites):
                if not (sb >> p) & 1 or (sa >> p) & 1:
                    continue
                sign = (-1) ** (basis.n_alpha + _popcount_below(sb, p) + _popcount_below(sa, p))
                ta = target.alpha.index[sa | (1 << p)]
                tb = target.beta.index[sb ^ (1 << p)]
                rows.append(ta * nb_t + tb)
                cols.append(ia * nb + ib)
                vals.append(sign)
    return sp.csr_matrix((vals, (rows, cols)), shape=(target.dim, basis.dim))


def s_squared(state: FCIState) -> float:
    """<S^2> = S_z (S_z + 1) + |S+ Psi|^2."""
    basis = state.basis
    sz = basis.s_z
    base = sz * (sz + 1.0)
    if basis.n_beta == 0 or basis.n_alpha == basis.n_sites:
        return float(base)
    raised = _raising_operator(basis) @ state.coefficients
    return float(base + np.vdot(raised, raised).real / np.vdot(state.coefficients, state.coefficients).real)


def density_derivatives(state: FCIState, ham: FCIHamiltonian, v_ext, sigma: str, dx: float):
    """(d rho_sigma/dt, d^2 rho_sigma/dt^2) from commutators with H."""
    c = state.matrix
    hc = ham.apply(state.coefficients, v_ext).reshape(c.shape)
    hhc = ham.apply(hc.ravel(), v_ext).reshape(c.shape)
    occ = _occ(state.basis, sigma)
    first = 2.0 * np.einsum("ab,abp->p", (c.conj() * hc).imag, occ)
    second = 2.0 * np.einsum("ab,abp->p", np.abs(hc) ** 2 - (c.conj() * hhc).real, occ)
    return first / dx, second / dx


@dataclass
class FCIRun:
    trajectories: dict
    initial_state: FCIState
    final_state: FCIState
    initial_energy: float
    rdms: dict
    norm_drift: float


def fci_adiabatic_run(
    system,
    grid: Grid1D,
    schedule: Schedule,
    dt: float,
    n_alpha: int,
    n_beta: int,
    record_stride: int = 1,
    rdm_indices=(0,),
    tol: float = 1e-12,
    norm_tolerance: float = 1e-6,
) -> FCIRun:
    """Ground state at t=0 propagated along the schedule; per-spin trajectories recorded."""
    n_steps = int(round(schedule.total_time / dt))
    if abs(n_steps * dt - schedule.total_time) > 1e-9 * schedule.total_time:
        raise ValueError(f"dt={dt} does not divide total time {schedule.total_time}")
    if n_steps % record_stride:
        raise ValueError(f"record_stride={record_stride} does not divide {n_steps} steps")
    basis = DeterminantBasis(grid.n_points, n_alpha, n_beta)
    ham = FCIHamiltonian(system, grid, basis)

    def v_fn(t):
        return external_potential(system, schedule, t, grid)

    state0, e0 = ground_state_fci(ham, v_fn(0.0))
    n_rec = n_steps // record_stride + 1
    rdm_set = {i % n_rec for i in rdm_indices}
    channels = [s for s, n in (("alpha", n_alpha), ("beta", n_beta)) if n > 0]
    data = {s: np.empty((3, n_rec, grid.n_points)) for s in channels}
    rdms = {s: {} for s in channels}
    state = state0
    worst = 0.0
    for step in range(n_steps + 1):
        t = step * dt
        if step % record_stride == 0:
            i = step // record_stride
            v_now = v_fn(t)
            for s in channels:
                data[s][0, i] = spin_density(state, s, grid.dx)
                data[s][1, i], data[s][2, i] = density_derivatives(state, ham, v_now, s, grid.dx)
                if i in rdm_set:
                    rdms[s][i] = spin_one_rdm(state, s, grid.dx)
            drift = abs(state.norm() - 1.0)
            worst = max(worst, drift)
            if drift > norm_tolerance:
                raise PropagationError(f"norm drift {drift:.2e} at t={t:.4f}")
        if step < n_steps:
            state = propagate_fci(state, t, dt, ham, v_fn, tol)
    times = np.arange(n_rec) * record_stride * dt
    trajs = {
        s: DensityTrajectory(
            grid, times, d[0], d[1], d[2], "exact",
            n_electrons=float(n_alpha if s == "alpha" else n_beta), stride=record_stride,
        )
        for s, d in data.items()
    }
    return FCIRun(trajs, state0, state, e0, rdms, worst)
