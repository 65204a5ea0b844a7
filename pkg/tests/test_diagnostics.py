import io
import math

import numpy as np
import pytest

from mhdci import diagnostics, geometry, iteration, spectral
from mhdci.spectral import Grid3

from conftest import desk_params


def test_energy_and_cross_helicity_of_initial_data():
    p = desk_params(grid_n=16)
    s = iteration.initial_state(p, np.array([0.0, 0.5, 1.0]))
    for i, t in enumerate(s.times):
        E = diagnostics.energy(s.u[i], s.B[i])
        assert np.isclose(E, t ** 2 / 4 + t ** 2 / (2 * (2 * np.pi) ** 3), rtol=1e-12, atol=1e-300)
        # u . B = t^2 (2 pi)^{-9/2} sin^2
        assert np.isclose(diagnostics.cross_helicity(s.u[i], s.B[i]), t ** 2 * (2 * np.pi) ** -1.5 / 2,
                          rtol=1e-12, atol=1e-300)


@pytest.mark.parametrize("t", [0.25, 1.0])
def test_helicity_closed_form(t):
    p = desk_params(grid_n=16)
    s = iteration.initial_state(p, np.array([t]))
    rep = {}
    h = diagnostics.magnetic_helicity(s.B[0], rep)
    assert np.isclose(h, diagnostics.helicity_closed_form(t, 16), rtol=1e-12)
    assert rep["gauge_defect"] < 1e-12


def test_helicity_rejects_non_solenoidal():
    g = Grid3(16)
    x1, _, _ = g.coords()
    B = np.zeros((3,) + g.shape)
    B[0] = np.sin(x1)
    with pytest.raises(diagnostics.NonSolenoidalError):
        diagnostics.magnetic_helicity(B)


def test_weak_residual_needs_three_slices():
    p = desk_params(grid_n=16)
    s = iteration.initial_state(p, np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        diagnostics.weak_residual(s)


def test_weak_residual_detects_wrong_stress():
    p = desk_params(grid_n=16)
    times, _ = iteration.time_grid(p)
    s = iteration.initial_state(p, times)
    w = diagnostics.weak_residual(s)
    assert np.all(w.velocity <= 10 * w.velocity_tolerance)
    s.R_u *= 1.01
    w = diagnostics.weak_residual(s)
    assert np.all(w.velocity > 100 * w.velocity_tolerance)


def test_convergence_order():
    e = [1.0, 0.25, 0.0625]
    assert np.allclose(diagnostics.convergence_order(e), 2.0)


def test_decorrelation_constant_amplitude():
    g = Grid3(32)
    rows = diagnostics.decorrelation_sweep(2.0 + np.zeros(g.shape), geometry.lambda_B()[0], [2, 4], g)
    for r in rows:
        assert abs(r.ratio - 1.0) < 1e-12


def test_derivative_ladder_single_mode():
    g = Grid3(16)
    x1, _, _ = g.coords()
    a = np.sin(2 * x1) + np.zeros(g.shape)
    lad = diagnostics.derivative_ladder(a, 2)
    assert np.allclose(lad / lad[0], [1, 2, 4])


def test_diagnose_and_csv_roundtrip(tmp_path, desk32):
    _, s0, s1 = desk32
    reports = [diagnostics.diagnose(s0), diagnostics.diagnose(s1, s1.meta["report"].margins, {"x": 1e-16})]
    path = tmp_path / "d.csv"
    diagnostics.write_csv(reports, path, "hash123")
    chash, rows = diagnostics.read_csv(path)
    assert chash == "hash123"
    assert len(rows) == len(s0.times) + len(s1.times)
    assert list(rows[0]) == diagnostics.COLUMNS
    assert rows[-1]["energy"] == reports[1].rows[-1]["energy"]
    text = diagnostics.summary(reports[1])
    assert "audit x" in text and "level q=1" in text


def test_write_csv_to_buffer():
    rep = diagnostics.DiagnosticsReport(0, [dict.fromkeys(diagnostics.COLUMNS, 0.5) | {"q": 0}])
    buf = io.StringIO()
    diagnostics.write_csv([rep], buf)
    assert buf.getvalue().startswith(f"# {diagnostics.SCHEMA}\n")


def test_check_finite_raises():
    rep = diagnostics.DiagnosticsReport(0, [{"t": 0.0, "energy": math.nan}])
    with pytest.raises(iteration.InternalError):
        rep.check_finite()


def test_helicity_growth_report(desk32):
    p, s0, s1 = desk32
    rep = diagnostics.helicity_growth_report([s0, s1], p)
    level0 = [r for r in rep.rows if r.q == 0]
    assert all(r.deviation < 1e-15 for r in level0)
    assert rep.doubling and "H(1) >= 2/3 H_0(1)" in rep.doubling
    assert rep.asymptotic_bound > 0
    assert all(r.deviation <= r.product_bound * (1 + 1e-9) + 1e-15 for r in rep.rows)
