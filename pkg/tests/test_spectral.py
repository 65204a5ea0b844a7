import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mhdci import spectral
from mhdci.spectral import Grid3

G = Grid3(16)


def _fields(g=G):
    x1, x2, x3 = g.coords()
    z = np.zeros(g.shape)
    return x1 + z, x2 + z, x3 + z


def _random_vector(seed, g=G, kmax=3):
    rng = np.random.default_rng(seed)
    fh = np.zeros((3,) + g.shape, dtype=complex)
    idx = np.arange(-kmax, kmax + 1) % g.n
    sub = np.ix_(idx, idx, idx)
    for c in range(3):
        fh[c][sub] = rng.normal(size=(len(idx),) * 3) + 1j * rng.normal(size=(len(idx),) * 3)
    return spectral.project_nonzero(spectral.ifft(fh, g))


def test_grid_nodes_and_validation():
    assert G.nodes[0] == -np.pi
    assert np.isclose(G.nodes[-1] + G.spacing, np.pi)
    for bad in (3, 7, 2):
        with pytest.raises(ValueError):
            Grid3(bad)


def test_gradient_of_single_mode():
    x1, x2, x3 = _fields()
    f = np.sin(2 * x1) * np.cos(3 * x3)
    g = spectral.gradient(f)
    assert np.allclose(g[0], 2 * np.cos(2 * x1) * np.cos(3 * x3), atol=1e-12)
    assert np.allclose(g[1], 0.0, atol=1e-12)
    assert np.allclose(g[2], -3 * np.sin(2 * x1) * np.sin(3 * x3), atol=1e-12)


def test_nyquist_mode_has_zero_derivative():
    x1, _, _ = _fields()
    f = np.cos(8 * x1)
    assert np.max(np.abs(spectral.gradient(f))) < 1e-12


@given(seed=st.integers(0, 10 ** 6))
@settings(max_examples=20, deadline=None)
def test_div_curl_and_curl_grad_vanish(seed):
    v = _random_vector(seed)
    f = v[0]
    assert np.max(np.abs(spectral.divergence(spectral.curl(v)))) < 1e-10
    assert np.max(np.abs(spectral.curl(spectral.gradient(f)))) < 1e-10


@given(seed=st.integers(0, 10 ** 6))
@settings(max_examples=20, deadline=None)
def test_leray_projection_is_solenoidal_and_idempotent(seed):
    v = _random_vector(seed)
    P = spectral.leray_project(v)
    assert np.max(np.abs(spectral.divergence(P))) < 1e-10
    assert np.max(np.abs(spectral.leray_project(P) - P)) < 1e-12


def test_biot_savart_inverts_curl():
    B = spectral.leray_project(_random_vector(3))
    A = spectral.biot_savart(B)
    assert np.max(np.abs(spectral.curl(A) - B)) < 1e-10
    assert np.max(np.abs(spectral.divergence(A))) < 1e-10


def test_tensor_divergence_contracts_second_index():
    x1, x2, _ = _fields()
    T = np.zeros((3, 3) + G.shape)
    T[0, 1] = np.sin(x2)
    d = spectral.tensor_divergence(T)
    assert np.allclose(d[0], np.cos(x2), atol=1e-12)
    assert np.allclose(d[1:], 0.0, atol=1e-12)


def test_inverse_laplacian():
    x1, x2, x3 = _fields()
    f = np.cos(x1 + 2 * x3) + 0.5
    rep = {}
    u = spectral.inv_neg_laplacian(f, rep)
    assert np.allclose(u, np.cos(x1 + 2 * x3) / 5, atol=1e-13)


@pytest.mark.parametrize("p,expected", [(2, (4 * np.pi ** 3) ** 0.5), (1, 16 * np.pi ** 2), (np.inf, 1.0)])
def test_lp_norm_of_sine(p, expected):
    x1, _, _ = _fields(Grid3(32))
    assert np.isclose(spectral.lp_norm(np.sin(x1), p), expected, rtol=5e-3 if p == 1 else 1e-12)  # trapezoid error at the kinks of |sin|


def test_lp_norm_of_tensor_is_frobenius():
    T = np.ones((3, 3) + G.shape)
    assert np.isclose(spectral.lp_norm(T, np.inf), 3.0)


def test_dealiased_product_removes_aliasing():
    g = Grid3(16)
    x1, _, _ = _fields(g)
    f = np.cos(6 * x1)
    prod = spectral.dealiased_product(f, f)
    # cos^2 = 1/2 + cos(12 x)/2; the 12 mode cannot live on a 16 grid and is dropped, not folded
    assert np.allclose(prod, 0.5, atol=1e-12)
    assert not np.allclose(f * f, 0.5)


def test_mollify_space_preserves_mean_and_smooths():
    x1, _, _ = _fields(Grid3(32))
    f = np.sign(np.sin(x1)) + 2.0
    m = spectral.mollify_space(f, 0.3)
    assert np.isclose(m.mean(), f.mean(), atol=1e-12)
    assert np.max(np.abs(spectral.gradient(m))) < np.max(np.abs(spectral.gradient(f)))


def test_time_mollifier_reproduces_linear_functions():
    t = np.linspace(0, 1, 21)
    vals = (3 * t - 1)[:, None, None, None] * np.ones((1,) + G.shape)
    out, h = spectral.mollify_time_array(vals, t[1] - t[0], 0.2)
    assert h >= 1
    assert np.allclose(out[:, 0, 0, 0], (3 * t - 1)[h:len(t) - h], atol=1e-13)


def test_time_mollifier_padding_error():
    vals = np.zeros((3,) + G.shape)
    with pytest.raises(spectral.PaddingError):
        spectral.mollify_time_array(vals, 0.01, 0.5)


def test_symmetric_traceless_is_exact():
    rng = np.random.default_rng(0)
    T = rng.normal(size=(3, 3) + G.shape)
    S = spectral.symmetric_traceless(T)
    assert np.array_equal(S, np.swapaxes(S, 0, 1))
    assert np.max(np.abs(spectral.trace(S))) == 0.0


def test_grid_mismatch():
    with pytest.raises(spectral.GridMismatchError):
        spectral._same_grid(np.zeros((8, 8, 8)), np.zeros((16, 16, 16)))


@pytest.mark.parametrize("shape", [(8, 8, 8), (3, 8, 8, 8), (3, 3, 8, 8, 8)])
def test_field_dump_roundtrip(tmp_path, shape):
    rng = np.random.default_rng(5)
    f = rng.normal(size=shape)
    path = tmp_path / "f.fld"
    spectral.write_field(path, f, 0.125)
    kind, t, g = spectral.read_field(path)
    assert t == 0.125
    assert np.array_equal(f, g)
    assert kind == {3: "scalar", 4: "vector", 5: "tensor"}[len(shape)]


def test_field_dump_layout_is_nodes_first():
    f = np.zeros((3, 4, 4, 4))
    f[1, 0, 0, 0] = 7.0
    data = spectral.field_bytes(f)
    body = data.split(b"\n", 1)[1]
    vals = np.frombuffer(body, dtype="<f8")
    assert vals[1] == 7.0 and vals.size == 192


def test_field_dump_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.fld"
    path.write_bytes(b"NOPE\n")
    with pytest.raises(spectral.FieldFormatError):
        spectral.read_field(path)


def test_vtk_output(tmp_path):
    x1, _, _ = _fields(Grid3(4))
    path = tmp_path / "out.vtk"
    spectral.write_vtk(path, {"p": x1 + 0.0 * x1, "u": np.zeros((3, 4, 4, 4))})
    text = path.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile")
    assert "DIMENSIONS 4 4 4" in text
    assert "POINT_DATA 64" in text


@given(seed=st.integers(0, 10 ** 6))
@settings(max_examples=10, deadline=None)
def test_dealiased_product_is_exact_for_low_modes(seed):
    # kmax = 3 on a 16 grid: the product has modes <= 6 < 8 and needs no truncation
    u = _random_vector(seed)
    assert np.max(np.abs(spectral.dealiased_product(u[0], u[1]) - u[0] * u[1])) < 1e-12
