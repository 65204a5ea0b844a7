"""Acceptance suite: one test group per criterion, each check logged with its measured value.

A summary with one pass/fail line per criterion is printed at the end of the
pytest run.
"""
import os
import time

import numpy as np
import pytest

from mhdci import amplitudes, blocks, cli, diagnostics, geometry, invdiv, iteration, params, spectral
from mhdci.spectral import Grid3


# ---------------------------------------------------------------- 1. geometry

def test_c1_geometric_decomposition(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    A = geometry.random_skew(rng, 10000, radius=geometry.EPS_B)
    wB = geometry.gamma_B(A)
    errB = float(np.max(np.abs(geometry.reconstruct_skew(wB) - A)))
    S = geometry.random_sym(rng, 10000, radius=geometry.eps_u())
    wU = geometry.gamma_u(S)
    errU = float(np.max(np.abs(geometry.reconstruct_sym(wU) - S)))
    at0 = geometry.gamma_B(np.zeros((3, 3)))
    atI = geometry.gamma_u(np.eye(3))
    elapsed = time.perf_counter() - t0
    ok = [
        record(1, "skew reconstruction", errB <= 1e-10, f"max error {errB:.2e}"),
        record(1, "skew weights positive", wB.min() > 0, f"min weight {wB.min():.3e}"),
        record(1, "symmetric reconstruction", errU <= 1e-10, f"max error {errU:.2e}"),
        record(1, "symmetric weights positive", wU.min() > 0, f"min weight {wU.min():.3e}"),
        record(1, "weights at A=0", list(at0) == [7 / 4, 11 / 3, 1.0, 35 / 12, 5 / 3]
               and all(v == 0 for row in geometry.skew_identity_defect() for v in row), f"{at0.tolist()}"),
        record(1, "weights at S=Id", np.max(np.abs(atI - 0.5)) <= 1e-15
               and geometry.sym_identity_exact() == [[int(i == j) for j in range(3)] for i in range(3)],
               f"{atI.tolist()}"),
        record(1, "runtime < 10 s", elapsed < 10, f"{elapsed:.2f} s"),
    ]
    assert all(ok)


# ---------------------------------------------------------------- 2. inverse divergence

def test_c2_inverse_divergence(record):
    t0 = time.perf_counter()
    g = Grid3(64)
    rng = np.random.default_rng(202)
    worst_sym = worst_skew = 0.0
    exact = True
    for _ in range(100):
        v = cli._band_limited_vector(rng, g, kmax=8)
        R = invdiv.inv_div_sym(v)
        worst_sym = max(worst_sym, invdiv.divergence_defect(R, v))
        exact &= bool(np.array_equal(R, np.swapaxes(R, 0, 1)) and np.max(np.abs(spectral.trace(R))) < 1e-15)
        f = spectral.leray_project(cli._band_limited_vector(rng, g, kmax=8))
        RB = invdiv.inv_div_skew(f)
        worst_skew = max(worst_skew, invdiv.divergence_defect(RB, f))
        exact &= bool(np.array_equal(RB, -np.swapaxes(RB, 0, 1)))
    elapsed = time.perf_counter() - t0
    ok = [
        record(2, "div R v = v", worst_sym <= 1e-10, f"max relative L2 {worst_sym:.2e}"),
        record(2, "div R^B f = f", worst_skew <= 1e-10, f"max relative L2 {worst_skew:.2e}"),
        record(2, "exact symmetric-traceless / skew", exact),
        record(2, "runtime < 1 min at 64^3", elapsed < 60, f"{elapsed:.1f} s"),
    ]
    assert all(ok)


# ---------------------------------------------------------------- 3. blocks

def test_c3_building_block_laws(record):
    t0 = time.perf_counter()
    prof = blocks.make_profile()
    g = Grid3(64)
    ms = [blocks.sample_block(prof, f, 1.0, 1.0, g, lattice="minimal", mode="bandlimited",
                              alias_free_squares="auto").info["mean_square"] for f in geometry.all_frames()]
    worst_ms = max(abs(m - 1) for m in ms)
    # pointwise sampling on a grid that resolves the profile: an independent check of <phi^2> and ||W||^2
    fine = blocks.sample_block(prof, geometry.lambda_B()[0], 1.0, 1.0, Grid3(256), lattice="minimal", force=True)
    W, _ = blocks.shear_fields(fine)
    w3d = spectral.lp_norm(W, 2) ** 2 / (8 * np.pi ** 3)
    del fine, W
    w1d = max(abs(blocks.norm_oracle_1d(prof, kap / r, r, 2) ** 2 / (8 * np.pi ** 3) - 1)
              for kap in (1, 4) for r in (1.0, 2.0 ** -4))
    slopes = blocks.norm_slopes()
    err_l = max(abs(s[0] - M) for (p, M), s in slopes.items())
    err_r = max(abs(s[1] - ((0.0 if p == np.inf else 1 / p) - 0.5)) for (p, M), s in slopes.items())
    expo, _ = blocks.product_support_exponent()
    elapsed = time.perf_counter() - t0
    ok = [
        record(3, "<phi^2> band-limited, all frames", worst_ms <= 1e-3, f"max |<phi^2> - 1| {worst_ms:.2e}"),
        record(3, "||W||^2 / 8 pi^3 pointwise 256^3", abs(w3d - 1) <= 1e-3, f"{w3d:.6f}"),
        record(3, "||W||^2 / 8 pi^3 1D oracle", w1d <= 1e-3, f"max deviation {w1d:.2e}"),
        record(3, "norm slope in lambda = M", err_l <= 0.05, f"max error {err_l:.2e}"),
        record(3, "norm slope in r = 1/p - 1/2", err_r <= 0.05, f"max error {err_r:.2e}"),
        record(3, "product support exponent 2", abs(expo - 2) <= 0.1, f"{expo:.4f}"),
        record(3, "runtime < 5 min", elapsed < 300, f"{elapsed:.1f} s"),
    ]
    assert all(ok)


# ---------------------------------------------------------------- 4. amplitudes

def _random_stress_fields(rng, g, scale):
    """Mollified random low-mode stresses: (symmetric traceless, skew), max entry ~ scale."""
    x = g.coords()
    out = []
    for _ in range(2):
        E = np.zeros((3, 3) + g.shape)
        for i in range(3):
            for j in range(3):
                k = rng.integers(-3, 4, size=3)
                E[i, j] = rng.normal() * np.cos(k[0] * x[0] + k[1] * x[1] + k[2] * x[2] + rng.uniform(0, 2 * np.pi))
        out.append(E)
    R_u = spectral.mollify_space(spectral.symmetric_traceless(out[0]), 0.3)
    R_B = spectral.mollify_space(spectral.skew_part(out[1]), 0.3)
    return scale * R_u / np.max(np.abs(R_u)), scale * R_B / np.max(np.abs(R_B))


@pytest.mark.parametrize("scale", [0.1, 1.0, 10.0])
def test_c4_amplitude_cancellation(record, scale):
    g = Grid3(32)
    rng = np.random.default_rng(404)
    delta = 0.5
    R_u, R_B = _random_stress_fields(rng, g, scale * delta)
    mag = amplitudes.magnetic_amplitudes(R_B, delta)
    vel = amplitudes.velocity_amplitudes(R_u, mag.G, delta)
    dB = amplitudes.magnetic_cancellation_defect(mag, R_B)
    du = amplitudes.velocity_cancellation_defect(vel, R_u, mag.G)
    z = np.linspace(1.0, 2.0, 1_000_001)[1:-1]
    c = amplitudes.chi(z)
    viol = int(np.sum((z > 2 * c) | (2 * c > 4 * z)))
    ok = [
        record(4, f"skew identity (|R| ~ {scale} delta)", dB <= 1e-10, f"max defect {dB:.2e}"),
        record(4, f"symmetric identity (|R| ~ {scale} delta)", du <= 1e-10, f"max defect {du:.2e}"),
        record(4, "chi sandwich on (1, 2)", viol == 0, f"{viol} violations on 1e6 points"),
    ]
    assert all(ok)


# ---------------------------------------------------------------- 5. initial data

@pytest.fixture(scope="module")
def level0_64():
    p = params.ParamSet(grid_n=64, time_n=9, q_max=0, block_lambda=1, lattice="minimal")
    times, _ = iteration.time_grid(p)
    return p, iteration.initial_state(p, times)


def test_c5_initial_data_residual_and_helicity(record, level0_64):
    t0 = time.perf_counter()
    p, s = level0_64
    w = diagnostics.weak_residual(s)
    ru = float(np.max(w.velocity / w.velocity_tolerance))
    rb = float(np.max(w.magnetic / w.magnetic_tolerance))
    lam0 = params.lambda_exact(p, 0)
    i1 = int(np.argmin(np.abs(s.times - 1.0)))
    h = diagnostics.magnetic_helicity(s.B[i1])
    expect = (2 * np.pi) ** -3 * lam0 ** -0.5
    rel = abs(h - expect) / expect
    elapsed = time.perf_counter() - t0
    ok = [
        record(5, "velocity residual <= 10 x tolerance", ru <= 10, f"max ratio {ru:.3f}"),
        record(5, "magnetic residual <= 10 x tolerance", rb <= 10, f"max ratio {rb:.3f}"),
        record(5, "H_BB(1) closed form", rel <= 1e-6, f"relative error {rel:.2e}"),
        record(5, "runtime < 1 min at 64^3", elapsed < 60, f"{elapsed:.1f} s"),
    ]
    assert all(ok)


def test_c5_initial_stress_l1_bound(record, level0_64):
    p, s = level0_64
    bound = params.lambda_exact(p, 0) ** -0.5
    nu = spectral.lp_norm(s.R_u[0], 1)
    nb = spectral.lp_norm(s.R_B[0], 1)
    ok = [
        record(5, "||R_0^u||_L1 <= lambda_0^(-1/2)", nu <= bound, f"{nu:.4f} vs {bound:.4f}"),
        record(5, "||R_0^B||_L1 <= lambda_0^(-1/2)", nb <= bound, f"{nb:.4f} vs {bound:.4f}"),
    ]
    assert all(ok), f"L1 norms {nu:.4f}, {nb:.4f} exceed lambda_0^(-1/2) = {bound}"


# ---------------------------------------------------------------- 6. one step

@pytest.fixture(scope="module")
def step64():
    p = params.ParamSet(grid_n=64, time_n=9, q_max=1, block_lambda=1, lattice="minimal")
    times, _ = iteration.time_grid(p)
    s0 = iteration.initial_state(p, times)
    t0 = time.perf_counter()
    s1 = iteration.step(s0, p)
    return p, s1, time.perf_counter() - t0


def test_c6_step_structure(record, step64):
    p, s1, elapsed = step64
    rep = s1.meta["report"]
    sol = rep.solenoidality
    scale = max(float(np.max(np.abs(s1.u))), float(np.max(np.abs(s1.B))))
    asym = float(np.max(np.abs(s1.R_u - np.swapaxes(s1.R_u, 1, 2))))
    tr = float(np.max(np.abs(np.trace(s1.R_u, axis1=1, axis2=2))))
    skew = float(np.max(np.abs(s1.R_B + np.swapaxes(s1.R_B, 1, 2))))
    zm = max(rep.max_audit("zero_mode_u"), rep.max_audit("zero_mode_B"))
    table = iteration.format_margins(rep.margins)
    print(table)
    ok = [
        record(6, "solenoidal", max(sol["div_u"], sol["div_B"]) <= 1e-10 * max(scale, 1.0),
               f"max |div| {max(sol['div_u'], sol['div_B']):.2e}"),
        record(6, "zero mean", max(sol["mean_u"], sol["mean_B"]) <= 1e-14,
               f"max |mean| {max(sol['mean_u'], sol['mean_B']):.2e}"),
        record(6, "R_u symmetric traceless, R_B skew", asym == 0.0 and tr <= 1e-15 and skew == 0.0,
               f"asym {asym:.1e} trace {tr:.1e} skew {skew:.1e}"),
        record(6, "zero-mode audit <= 1e-8", zm <= 1e-8, f"{zm:.2e}"),
        record(6, "margin table emitted", len(rep.margins) == 8 and "||R_B_{q+1}||_L1" in table,
               f"{len(rep.margins)} rows"),
        record(6, "runtime", elapsed < 1800, f"{elapsed:.1f} s at 64^3, {len(s1.times)} slices"),
    ]
    assert all(ok)


def test_c6_residual_convergence(record):
    errs = []
    for tn in (5, 9, 17):
        p = params.ParamSet(grid_n=32, time_n=tn, q_max=1, block_lambda=1, lattice="minimal")
        times, _ = iteration.time_grid(p)
        s1 = iteration.step(iteration.shear_state(p, times), p)
        w = diagnostics.weak_residual(s1)
        k = int(np.argmin(np.abs(w.times - 0.5)))
        errs.append((w.velocity[k], w.magnetic[k]))
        del s1
    e = np.array(errs)
    ou = diagnostics.convergence_order(e[:, 0])
    ob = diagnostics.convergence_order(e[:, 1])
    ok = [
        record(6, "velocity residual order 2", np.all(np.abs(ou - 2) <= 0.3), f"orders {np.round(ou, 4).tolist()}"),
        record(6, "magnetic residual order 2", np.all(np.abs(ob - 2) <= 0.3), f"orders {np.round(ob, 4).tolist()}"),
    ]
    assert all(ok)


# ---------------------------------------------------------------- 7. decorrelation and commutator

def test_c7_decorrelation_and_commutator(record):
    g = Grid3(64)
    x1, x2, _ = g.coords()
    z = np.zeros(g.shape)
    frame = geometry.lambda_B()[0]
    const = diagnostics.decorrelation_sweep(3.0 + z, frame, [4, 16], g)
    c_err = max(abs(r.ratio - 1) for r in const)
    sin_row = diagnostics.decorrelation_sweep(np.sin(x1) + z, frame, [16], g)[0]
    f_norm = spectral.lp_norm(np.cos(x1) + z, 2)
    flat = invdiv.commutator_gain_check(1.0 + z, lambda k: np.cos(k * x1) + z, [8, 16, 24])
    n_err = float(np.max(np.abs(flat.measured * flat.kappas / f_norm - 1)))
    sweep = invdiv.commutator_gain_check(np.sin(x1) + z, lambda k: np.cos(k * x1) + np.cos(k * x2) + z,
                                         [8, 16, 24])
    ok = [
        record(7, "constant amplitude decorrelation ratio 1", c_err <= 1e-10, f"max |ratio - 1| {c_err:.2e}"),
        record(7, "sin amplitude decorrelation ratio 1 at kappa 16", abs(sin_row.ratio - 1) <= 0.05,
               f"{sin_row.ratio:.6f}"),
        record(7, "single mode commutator norm ||f|| / kappa", n_err <= 1e-10, f"max relative error {n_err:.2e}"),
        record(7, "commutator decay slope -1", abs(sweep.slope + 1) <= 0.1, f"{sweep.slope:.4f}"),
    ]
    assert all(ok)


# ---------------------------------------------------------------- 8. determinism

def _tree(root):
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            path = os.path.join(d, f)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


def test_c8_determinism(record, tmp_path):
    cfg = tmp_path / "desk.ini"
    cfg.write_text("grid_n = 32\ntime_n = 5\nq_max = 1\n")
    for name in ("a", "b"):
        assert cli.main(["--config", str(cfg), "--output-dir", str(tmp_path / name), "run"],
                        out=open(os.devnull, "w")) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    same = sorted(a) == sorted(b) and all(a[k] == b[k] for k in a)
    differing = [k for k in a if a.get(k) != b.get(k)]
    ok = record(8, "byte-identical checkpoints and CSVs", same and any(k.endswith(".csv") for k in a),
                f"{len(a)} files compared, {len(differing)} differ")
    assert ok
