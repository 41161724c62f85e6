import numpy as np
import pytest
from hypothesis import given, strategies as st

from adiabatic_pes.grid import Grid1D
from adiabatic_pes.systems import (
    HarmonicTrap,
    Schedule,
    SoftCoulombLiH,
    external_potential,
    interaction_matrix,
    interaction_potential,
    schedule_derivative,
    schedule_value,
)


def test_schedule_endpoints_and_midpoint():
    assert schedule_value(0.0) == 0.0
    assert schedule_value(1.0) == pytest.approx(1.0, abs=1e-14)
    assert schedule_value(0.5) == pytest.approx(0.5, abs=1e-14)


@pytest.mark.parametrize("s", [0.0, 1.0])
@pytest.mark.parametrize("order", [1, 2, 3])
def test_schedule_derivatives_vanish_at_ends(s, order):
    assert abs(schedule_derivative(s, order)) < 1e-10


def test_schedule_derivatives_against_finite_differences():
    h = 1e-3
    # one-sided stencils at the ends
    assert abs((schedule_value(h) - schedule_value(0.0)) / h) < 1e-6
    assert abs((schedule_value(1.0) - schedule_value(1 - h)) / h) < 1e-6
    s = np.linspace(0.1, 0.9, 9)
    fd = (schedule_value(s + h) - schedule_value(s - h)) / (2 * h)
    np.testing.assert_allclose(fd, 140 * s**3 * (1 - s) ** 3, atol=1e-5)


@pytest.mark.parametrize("s", [-0.1, 1.1])
def test_schedule_rejects_outside_unit_interval(s):
    with pytest.raises(ValueError):
        schedule_value(s)


@given(st.floats(0.0, 1.0))
def test_schedule_bounded_and_monotone(s):
    v = schedule_value(s)
    assert -1e-15 <= v <= 1 + 1e-15
    assert schedule_derivative(s) >= -1e-12


def test_lih_potential_and_interaction_values():
    lih = SoftCoulombLiH()
    assert lih.v_ext(0.0, 0.0) == pytest.approx(-1 / np.sqrt(0.7) - 1 / np.sqrt(2.25), abs=1e-12)
    assert lih.v_ext(0.0, 0.0) == pytest.approx(-1.861895, abs=1e-6)
    assert interaction_potential(lih, 0.3, 0.3) == pytest.approx(1.290994, abs=1e-6)
    assert interaction_potential(HarmonicTrap(), 1.0, 1.0) == pytest.approx(0.5)


def test_interaction_is_symmetric(rng):
    lih = SoftCoulombLiH()
    a, b = rng.normal(size=20), rng.normal(size=20)
    np.testing.assert_array_equal(lih.interaction(a, b), lih.interaction(b, a))
    w = interaction_matrix(lih, Grid1D(10, 0.5))
    np.testing.assert_array_equal(w, w.T)


def test_lih_potential_is_asymmetric_for_finite_R():
    g = Grid1D(32, 0.6)
    v = SoftCoulombLiH().v_ext(g.x, 1.5)
    assert np.max(np.abs(v - v[::-1])) > 1e-2


def test_external_potential_follows_schedule():
    g = Grid1D(32, 0.6)
    lih = SoftCoulombLiH()
    sch = Schedule(144.0, 0.25, 4.25)
    np.testing.assert_array_equal(external_potential(lih, sch, 0.0, g), lih.v_ext(g.x, 0.25))
    np.testing.assert_allclose(external_potential(lih, sch, 144.0, g), lih.v_ext(g.x, 4.25), atol=1e-14)
    trap_sched = Schedule(60.0, 1.0, 1.1)
    assert trap_sched.parameter(60.0) == pytest.approx(1.1, abs=1e-15)


def test_modes_agree_at_endpoints_only():
    g = Grid1D(32, 0.6)
    lih = SoftCoulombLiH()
    geo = Schedule(10.0, 0.25, 4.25)
    mix = Schedule(10.0, 0.25, 4.25, mode="hamiltonian_mix")
    for t in (0.0, 10.0):
        np.testing.assert_allclose(external_potential(lih, geo, t, g), external_potential(lih, mix, t, g), atol=1e-14)
    assert np.max(np.abs(external_potential(lih, geo, 5.0, g) - external_potential(lih, mix, 5.0, g))) > 1e-3
    s = schedule_value(0.5)
    np.testing.assert_allclose(
        external_potential(lih, mix, 5.0, g), (1 - s) * lih.v_ext(g.x, 0.25) + s * lih.v_ext(g.x, 4.25)
    )


def test_harmonic_prefactor_convention():
    g = Grid1D(12, 0.7)
    np.testing.assert_allclose(HarmonicTrap().v_ext(g.x, 1.1), 0.55 * g.x**2)
    np.testing.assert_allclose(HarmonicTrap(prefactor=1.0).v_ext(g.x, 1.1), 1.1 * g.x**2)


def test_bad_inputs_rejected():
    with pytest.raises(ValueError):
        SoftCoulombLiH(soft_a=0.0)
    with pytest.raises(ValueError):
        Schedule(1.0, 0, 1, mode="linear")
    with pytest.raises(TypeError):
        external_potential(object(), Schedule(1.0, 0, 1), 0.0, Grid1D(8, 1.0))
