import numpy as np
import pytest

from adiabatic_pes.grid import Grid1D
from adiabatic_pes.trajectory import DensityTrajectory, read_binary, read_csv, write_binary, write_csv


def _toy(n_t=5, n_x=8, provenance="exact"):
    g = Grid1D(n_x, 0.5)
    t = np.arange(n_t) * 0.1
    base = np.exp(-g.x**2)
    base *= 2.0 / g.integrate(base)
    rho = np.tile(base, (n_t, 1))
    return DensityTrajectory(g, t, rho, np.zeros_like(rho), np.zeros_like(rho), provenance)


def test_shape_validation_and_electron_count():
    tr = _toy()
    assert tr.n_electrons == 2.0
    np.testing.assert_allclose(tr.electron_counts(), 2.0)
    with pytest.raises(ValueError):
        DensityTrajectory(tr.grid, tr.times, tr.rho[:, :-1], tr.drho_dt, tr.d2rho_dt2)
    with pytest.raises(ValueError):
        _toy(provenance="guessed")


def test_csv_round_trip_is_exact(tmp_path):
    tr = _toy()
    tr.rho[2] *= 1.0 + 1e-13
    path = write_csv(tr, tmp_path / "rho.csv")
    t, rho = read_csv(path, tr.grid)
    np.testing.assert_array_equal(t, tr.times)
    np.testing.assert_array_equal(rho, tr.rho)
    again = write_csv(tr, tmp_path / "rho2.csv")
    assert path.read_bytes() == again.read_bytes()


def test_binary_round_trip(tmp_path):
    tr = _toy(provenance="smoothed")
    tr.d2rho_dt2[1, 3] = 0.123456789
    back = read_binary(write_binary(tr, tmp_path / "t.bin"))
    assert back.provenance == "smoothed"
    assert back.grid.same_as(tr.grid)
    for name in ("times", "rho", "drho_dt", "d2rho_dt2"):
        np.testing.assert_array_equal(getattr(back, name), getattr(tr, name))


def test_binary_rejects_foreign_file(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"\0" * 128)
    with pytest.raises(ValueError):
        read_binary(p)


def test_window_and_reverse():
    tr = _toy(n_t=6)
    tr.drho_dt[:] = np.arange(6)[:, None]
    w = tr.window(1, 4)
    assert len(w) == 3 and w.times[0] == tr.times[1]
    r = tr.reversed()
    np.testing.assert_allclose(r.times, tr.times)
    np.testing.assert_array_equal(r.drho_dt[:, 0], -np.arange(6)[::-1])
