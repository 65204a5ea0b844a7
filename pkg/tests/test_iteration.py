import numpy as np
import pytest

from mhdci import iteration, spectral
from mhdci.spectral import Grid3

from conftest import desk_params


def test_time_grid_padding():
    p = desk_params(q_max=2)
    times, offsets = iteration.time_grid(p)
    assert offsets[-1] == 0 and offsets[0] > offsets[1] > 0
    assert len(times) == p.time_n + 2 * offsets[0]
    dt = p.t_end / (p.time_n - 1)
    assert np.isclose(times[offsets[0]], 0.0) and np.isclose(times[-1 - offsets[0]], 1.0)
    assert np.allclose(np.diff(times), dt)
    with pytest.raises(spectral.PaddingError):
        iteration.time_grid(desk_params(t_pad=0.0))


def test_initial_state_closed_form():
    p = desk_params(grid_n=16)
    s = iteration.initial_state(p, np.array([0.0, 0.5, 1.0]))
    _, _, x3 = s.grid.coords()
    assert np.allclose(s.u[2, 0], (2 * np.pi) ** -1.5 * np.sin(4 * x3) + 0 * s.u[2, 0])
    assert np.allclose(s.B[1, 1], 0.5 * (2 * np.pi) ** -3 * np.cos(4 * x3) + 0 * s.B[1, 1])
    for i in range(3):
        assert np.max(np.abs(spectral.divergence(s.u[i]))) == 0.0
    # the fields are linear in t and the stresses invert d_t u, d_t B (slices at t = 0 and 1)
    assert np.allclose(spectral.tensor_divergence(s.R_u[0]), s.u[2] - s.u[0], atol=1e-13)
    assert np.allclose(spectral.tensor_divergence(s.R_B[0]), s.B[2] - s.B[0], atol=1e-13)


def test_initial_state_requires_perfect_square():
    with pytest.raises(ValueError):
        iteration.initial_state(desk_params(a=8), np.array([0.0, 1.0]))


def test_mollify_state_keeps_level0_fields():
    # u_0 is linear in t and a single Fourier mode: the mollifier barely changes it
    p = desk_params(grid_n=16)
    times, _ = iteration.time_grid(p)
    s = iteration.initial_state(p, times)
    ell = 0.1
    mf = iteration.mollify_state(s, ell)
    h = mf.halfwidth
    mult = spectral.mollifier_multiplier_1d(16, ell)[4]
    assert np.allclose(mf.u, s.u[h:len(times) - h] * mult, atol=1e-14)
    # all quadratic terms of the level-0 data vanish or are constant in space
    assert np.max(np.abs(mf.R_comm_u)) < 1e-14 + 1e-3 * np.max(np.abs(s.u)) ** 2
    mf2 = iteration.mollify_state(s, ell, strict_products=True)
    assert np.allclose(mf2.u, mf.u)


def test_step_outputs(desk32):
    p, s0, s1 = desk32
    assert s1.q == 1
    assert len(s1.times) == p.time_n
    assert np.allclose(s1.times, np.linspace(0, 1, p.time_n))
    rep = s1.meta["report"]
    assert rep.solenoidality["div_u"] < 1e-10 and rep.solenoidality["div_B"] < 1e-10
    assert rep.solenoidality["mean_u"] < 1e-14 and rep.solenoidality["mean_B"] < 1e-14
    assert np.array_equal(s1.R_u, np.swapaxes(s1.R_u, 1, 2))
    assert np.max(np.abs(np.trace(s1.R_u, axis1=1, axis2=2))) < 1e-14
    assert np.array_equal(s1.R_B, -np.swapaxes(s1.R_B, 1, 2))
    assert rep.max_audit("zero_mode_u") < 1e-8 and rep.max_audit("zero_mode_B") < 1e-8
    assert rep.max_audit("cross_sum_defect_u") < 1e-10
    assert max(rep.pressure_crosscheck) < 1e-8
    assert len(rep.margins) == 8


def test_step_residual_at_roundoff(desk32):
    from mhdci import diagnostics
    _, _, s1 = desk32
    w = diagnostics.weak_residual(s1)
    assert np.all(w.velocity <= 10 * w.velocity_tolerance)
    assert np.all(w.magnetic <= 10 * w.magnetic_tolerance)


def test_perturbation_is_solenoidal():
    p = desk_params(grid_n=32)
    g = Grid3(32)
    bset = iteration.make_blocks(p, 0, g)
    rng = np.random.default_rng(0)
    x1, x2, x3 = g.coords()
    a = np.stack([1.0 + 0.3 * np.cos(x1 + j) * np.sin(x3) + 0 * x2 for j in range(11)])
    bundle = iteration.build_perturbation(a, 0.1 * a, bset)
    assert np.max(np.abs(spectral.divergence(bundle.w))) < 1e-10
    assert np.max(np.abs(spectral.divergence(bundle.d))) < 1e-10
    # the corrector is small compared with the principal part
    assert spectral.lp_norm(bundle.w_c, 2) < spectral.lp_norm(bundle.w_p, 2)
    del rng


def test_check_structure_raises():
    T = np.zeros((3, 3, 4, 4, 4))
    T[0, 1] = 1.0
    with pytest.raises(iteration.InternalError):
        iteration.check_structure(T, np.zeros_like(T))
    with pytest.raises(iteration.InternalError):
        iteration.check_structure(np.zeros_like(T), np.abs(T + np.swapaxes(T, 0, 1)))


def test_margin_table(desk32):
    _, _, s1 = desk32
    text = iteration.format_margins(s1.meta["report"].margins)
    assert "||R_u_{q+1}||_L1" in text and "holds" in text


def test_checkpoint_roundtrip(tmp_path, desk32):
    p, _, s1 = desk32
    iteration.save_checkpoint(s1, tmp_path / "ck", "abc", p)
    man = iteration.read_manifest(tmp_path / "ck")
    assert man["schema"] == iteration.CHECKPOINT_SCHEMA and man["config_hash"] == "abc"
    back = iteration.load_checkpoint(tmp_path / "ck")
    assert back.q == s1.q
    for name in ("u", "B", "p", "R_u", "R_B"):
        assert np.array_equal(getattr(back, name), getattr(s1, name))
    assert np.array_equal(back.times, s1.times)


def test_checkpoint_wrong_schema(tmp_path):
    (tmp_path / "manifest.txt").write_text("schema = other\n")
    with pytest.raises(ValueError):
        iteration.read_manifest(tmp_path)
