import numpy as np
import pytest
from scipy.linalg import expm

from adiabatic_pes.exact2e import (
    PropagationError,
    SplitOperatorPropagator,
    TwoElectronHamiltonian,
    TwoElectronState,
    _SectorBasis,
    adiabatic_run,
    density,
    density_first_derivative,
    density_second_derivative,
    energy_expectation,
    ground_state,
    instantaneous_overlap,
    one_rdm,
)
from adiabatic_pes.grid import Grid1D, kinetic_matrix
from adiabatic_pes.systems import Schedule, SoftCoulombLiH


def _random_state(grid, rng, symmetry="singlet"):
    a = rng.normal(size=(grid.n_points,) * 2) + 1j * rng.normal(size=(grid.n_points,) * 2)
    st = TwoElectronState(grid, a, symmetry).symmetrize()
    st.amplitudes /= st.norm()
    return st


def test_lanczos_matches_dense_sector_oracle(lih, lih_grid):
    # dense oracle: full N^2 Hamiltonian restricted to the symmetric pair space
    _, e_lanczos = ground_state(lih, lih_grid, 0.25)
    ham = TwoElectronHamiltonian(lih, lih_grid)
    b = _SectorBasis(lih_grid.n_points, 1.0).matrix()
    h = b.T @ ham.dense(lih.v_ext(lih_grid.x, 0.25)) @ b
    assert h.shape == (528, 528)
    assert e_lanczos == pytest.approx(np.linalg.eigvalsh(h)[0], abs=1e-9)
    assert e_lanczos == pytest.approx(-1.92016, abs=1e-5)


def test_sector_ground_states_are_eigenstates(lih, lih_grid):
    ham = TwoElectronHamiltonian(lih, lih_grid)
    v = lih.v_ext(lih_grid.x, 1.0)
    for sym in ("singlet", "triplet"):
        st, e = ground_state(lih, lih_grid, symmetry=sym, v_ext=v)
        psi = st.amplitudes
        assert np.linalg.norm(ham.apply(psi, v) - e * psi) * lih_grid.dx < 1e-9
        assert st.norm() == pytest.approx(1.0, abs=1e-12)
        assert st.symmetry_residual() < 1e-12
    trip, _ = ground_state(lih, lih_grid, 1.0, symmetry="triplet")
    assert np.max(np.abs(np.diagonal(trip.amplitudes))) < 1e-12


def test_triplet_above_singlet_and_curves_converge(lih, lih_grid):
    gaps = []
    for R in (0.25, 1.25, 2.25, 3.25, 4.25):
        es = ground_state(lih, lih_grid, R)[1]
        et = ground_state(lih, lih_grid, R, symmetry="triplet")[1]
        assert et > es
        gaps.append(et - es)
    assert gaps[-1] < 0.2 * gaps[0]


def test_density_and_rdm_conventions(lih, lih_grid, rng):
    g = lih_grid
    st = _random_state(g, rng)
    rho = density(st)
    gam = one_rdm(st)
    assert g.integrate(rho) == pytest.approx(2.0, abs=1e-10)
    np.testing.assert_allclose(np.diagonal(gam).real, rho, atol=1e-12)
    np.testing.assert_allclose(gam, gam.conj().T, atol=1e-14)
    phi = np.exp(-g.x**2)
    phi /= g.norm(phi)
    prod = TwoElectronState(g, np.outer(phi, phi))
    np.testing.assert_allclose(density(prod), 2 * phi**2, atol=1e-14)
    w = np.linalg.eigvalsh(g.dx * one_rdm(prod))
    np.testing.assert_allclose(w[-1], 2.0, atol=1e-12)
    np.testing.assert_allclose(w[:-1], 0.0, atol=1e-12)


def test_kinetic_trace_matches_pair_expectation(lih, lih_grid):
    g = lih_grid
    st, _ = ground_state(lih, g, 0.25)
    ham = TwoElectronHamiltonian(lih, g)
    pair_t = (g.dx**2 * np.vdot(st.amplitudes, ham.kinetic(st.amplitudes))).real
    gam = one_rdm(st)
    assert pair_t == pytest.approx(g.dx * np.trace(kinetic_matrix(g) @ gam).real, abs=1e-10)


def test_stationary_state_derivatives_vanish(lih, lih_grid):
    v = lih.v_ext(lih_grid.x, 0.25)
    st, _ = ground_state(lih, lih_grid, v_ext=v)
    ham = TwoElectronHamiltonian(lih, lih_grid)
    assert np.max(np.abs(density_first_derivative(st, ham, v))) < 1e-9
    assert np.max(np.abs(density_second_derivative(st, ham, v))) < 1e-9


def test_density_derivatives_match_finite_differences(lih, rng):
    g = Grid1D(8, 0.9)
    v = lih.v_ext(g.x, 1.0)
    ham = TwoElectronHamiltonian(lih, g)
    st = _random_state(g, rng)
    hmat = ham.dense(v)
    delta = 1e-3

    def rho_at(t):
        psi = (expm(-1j * t * hmat) @ st.amplitudes.ravel()).reshape(8, 8)
        return density(TwoElectronState(g, psi))

    d1_fd = (rho_at(delta) - rho_at(-delta)) / (2 * delta)
    d2_fd = (rho_at(delta) - 2 * rho_at(0.0) + rho_at(-delta)) / delta**2
    d1 = density_first_derivative(st, ham, v)
    d2 = density_second_derivative(st, ham, v)
    scale = np.max(np.abs(d2)) + 1.0
    assert np.max(np.abs(d1 - d1_fd)) < 1e-4 * scale
    assert np.max(np.abs(d2 - d2_fd)) < 1e-4 * scale
    assert abs(g.integrate(d2)) < 1e-10
    assert abs(g.integrate(d1)) < 1e-10


def test_frozen_eigenstate_only_picks_up_phase(lih, lih_grid):
    v = lih.v_ext(lih_grid.x, 0.25)
    st, e = ground_state(lih, lih_grid, v_ext=v)
    prop = SplitOperatorPropagator(TwoElectronHamiltonian(lih, lih_grid), 0.012)
    out = st
    for _ in range(50):
        out = prop.step(out, v)
    # splitting error perturbs the eigenstate only at O(dt^2)
    assert abs(abs(st.overlap(out)) - 1.0) < 1e-7
    assert out.norm() == pytest.approx(1.0, abs=1e-12)


def test_split_operator_second_order(lih, rng):
    g = Grid1D(8, 0.9)
    ham = TwoElectronHamiltonian(lih, g)
    sch = Schedule(1.0, 0.5, 1.5)
    st = _random_state(g, rng)
    # dense reference from many tiny midpoint steps
    t_end = 0.4

    def evolve(n):
        dt = t_end / n
        prop = SplitOperatorPropagator(ham, dt)
        s = st
        for k in range(n):
            s = prop.step(s, lih.v_ext(g.x, sch.parameter((k + 0.5) * dt)))
        return s.amplitudes

    ref = evolve(512)
    errs = [np.linalg.norm(evolve(n) - ref) for n in (8, 16, 32)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(3.3 < r < 4.8 for r in ratios)


def test_energy_expectation_of_ground_state(lih, lih_grid):
    v = lih.v_ext(lih_grid.x, 2.0)
    st, e = ground_state(lih, lih_grid, v_ext=v)
    assert energy_expectation(st, TwoElectronHamiltonian(lih, lih_grid), v) == pytest.approx(e, abs=1e-12)


def test_static_schedule_density_drift_is_splitting_error(lih):
    # the sector eigenstate is stationary only up to the O(dt^2) Strang error
    g = Grid1D(16, 0.8)
    drift = []
    for dt, stride in ((0.012, 10), (0.006, 20)):
        run = adiabatic_run(lih, g, Schedule(1.2, 1.0, 1.0), dt, record_stride=stride)
        assert len(run.trajectory) == 11
        assert run.norm_drift < 1e-12
        drift.append(np.max(np.abs(run.trajectory.rho - run.trajectory.rho[0])))
    assert drift[0] < 1e-4
    assert 3.0 < drift[0] / drift[1] < 5.0


def test_adiabatic_run_records_and_validates(lih):
    g = Grid1D(16, 0.8)
    run = adiabatic_run(lih, g, Schedule(2.4, 0.25, 1.0), 0.012, record_stride=20, rdm_indices=(0, -1))
    tr = run.trajectory
    assert len(tr) == 11 and tr.times[-1] == pytest.approx(2.4)
    assert set(run.rdms) == {0, 10}
    np.testing.assert_allclose(tr.electron_counts(), 2.0, atol=1e-10)
    with pytest.raises(ValueError):
        adiabatic_run(lih, g, Schedule(1.0, 0.25, 1.0), 0.3)
    with pytest.raises(ValueError):
        adiabatic_run(lih, g, Schedule(1.2, 0.25, 1.0), 0.012, record_stride=7)


def test_commutator_second_derivative_matches_recorded_density(lih):
    g = Grid1D(16, 0.8)
    run = adiabatic_run(lih, g, Schedule(6.0, 0.25, 2.0), 0.003, record_stride=1)
    tr = run.trajectory
    fd = (tr.rho[2:] - 2 * tr.rho[1:-1] + tr.rho[:-2]) / tr.dt**2
    assert np.max(np.abs(fd - tr.d2rho_dt2[1:-1])) < 1e-3 * np.max(np.abs(tr.d2rho_dt2))


def test_slower_schedule_is_more_adiabatic(lih):
    g = Grid1D(16, 0.8)
    v_end = lih.v_ext(g.x, 2.0)
    ov = []
    for T in (2.4, 12.0):
        run = adiabatic_run(lih, g, Schedule(T, 0.25, 2.0), 0.012, record_stride=100 if T > 3 else 50)
        ov.append(instantaneous_overlap(run.final_state, lih, v_end))
    assert ov[0] < ov[1] <= 1.0


def test_norm_guard_raises():
    g = Grid1D(8, 0.9)
    bad = TwoElectronState(g, np.ones((8, 8)) * 2.0)
    with pytest.raises(PropagationError):
        adiabatic_run(SoftCoulombLiH(), g, Schedule(0.12, 0.25, 0.25), 0.012, initial_state=bad)
