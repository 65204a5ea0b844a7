"""Measured quantities: conserved functionals, weak residuals, helicity and
decorrelation reports, and the per-slice diagnostics table.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import blocks, params as params_mod, spectral
from .iteration import InternalError, State, initial_state

SCHEMA = "MHDDIAG v1"
NORM_PS = (1, 2, 3, np.inf)
GAUGE_TOL = 1e-10
SOLENOIDAL_TOL = 1e-8
# round-off floor of a residual, relative to the size of its largest term
ROUNDOFF = 1e3 * np.finfo(float).eps


class NonSolenoidalError(ValueError):
    pass


# ---------------------------------------------------------------- functionals

def energy(u, B):
    """(1/2) int |u|^2 + |B|^2."""
    return 0.5 * spectral.integrate(np.sum(u ** 2, axis=0) + np.sum(B ** 2, axis=0))


def cross_helicity(u, B):
    """int u . B."""
    return spectral.integrate(spectral.dot(u, B))


def _random_gauge(grid, seed=0, modes=3):
    """A smooth real scalar with a few random low Fourier modes."""
    rng = np.random.default_rng(seed)
    x = grid.coords()
    chi = np.zeros(grid.shape)
    for _ in range(modes):
        k = rng.integers(-3, 4, size=3)
        ph = rng.uniform(0, 2 * np.pi)
        chi = chi + rng.normal() * np.cos(k[0] * x[0] + k[1] * x[1] + k[2] * x[2] + ph)
    return chi


def magnetic_helicity(B, report=None, gauge_seed=0):
    """int A . B with A = curl (-Delta)^{-1} B, cross-checked in a second gauge.

    The value is recomputed with A + grad chi for a random smooth chi; a
    relative discrepancy above GAUGE_TOL raises InternalError.
    """
    g = spectral._same_grid(B)
    div = spectral.lp_norm(spectral.divergence(B), 2, g)
    scale = max(spectral.lp_norm(B, 2, g), 1.0)
    if div > SOLENOIDAL_TOL * scale:
        raise NonSolenoidalError(f"helicity needs div B = 0; measured ||div B||_L2 = {div:.3e}")
    A = spectral.biot_savart(B)
    h = spectral.integrate(spectral.dot(A, B), g)
    chi = _random_gauge(g, gauge_seed)
    h2 = spectral.integrate(spectral.dot(A + spectral.gradient(chi), B), g)
    defect = abs(h2 - h) / max(abs(h), spectral.lp_norm(A, 2, g) * spectral.lp_norm(B, 2, g), 1e-300)
    if report is not None:
        report["gauge_defect"] = defect
        report["divergence_l2"] = div
    if defect > GAUGE_TOL:
        raise InternalError(f"magnetic helicity is gauge dependent: relative change {defect:.3e}")
    return h


# ---------------------------------------------------------------- weak residual

@dataclass
class WeakResidual:
    times: np.ndarray
    velocity: np.ndarray  # ||P_L(...)||_L2 per interior slice
    magnetic: np.ndarray
    velocity_fd: np.ndarray  # ||P_L (D2 - D4) u|| estimate of the differencing error
    magnetic_fd: np.ndarray
    velocity_floor: np.ndarray  # round-off floor from the term magnitudes
    magnetic_floor: np.ndarray

    @property
    def velocity_tolerance(self):
        return np.maximum(self.velocity_fd, self.velocity_floor)

    @property
    def magnetic_tolerance(self):
        return np.maximum(self.magnetic_fd, self.magnetic_floor)


def _d4(values, i, dt):
    return (values[i - 2] - 8 * values[i - 1] + 8 * values[i + 1] - values[i + 2]) / (12 * dt)


def weak_residual(s: State, strict_products=False) -> WeakResidual:
    """Strong-form residuals of the relaxed system on the interior slices.

    Time derivatives are centered second order differences. The differencing
    error is estimated by the gap to the fourth order stencil where five
    slices are available (the nearest available estimate is used at the two
    edge slices).
    """
    nt = len(s.times)
    if nt < 3:
        raise ValueError(f"weak residual needs at least 3 time slices, got {nt}")
    dt = s.dt
    idx = list(range(1, nt - 1))
    rv, rm, ev, em, fv, fm = [], [], [], [], [], []
    for i in idx:
        du = (s.u[i + 1] - s.u[i - 1]) / (2 * dt)
        dB = (s.B[i + 1] - s.B[i - 1]) / (2 * dt)
        flux_u = spectral.tensor_divergence(spectral.outer_product(s.u[i], s.u[i], strict_products)
                                            - spectral.outer_product(s.B[i], s.B[i], strict_products))
        ub = spectral.outer_product(s.u[i], s.B[i], strict_products)
        flux_B = spectral.tensor_divergence(ub - ub.swapaxes(0, 1))
        div_Ru = spectral.tensor_divergence(s.R_u[i])
        div_RB = spectral.tensor_divergence(s.R_B[i])
        rv.append(spectral.lp_norm(spectral.leray_project(du + flux_u - div_Ru), 2))
        rm.append(spectral.lp_norm(dB + flux_B - div_RB, 2))
        fv.append(ROUNDOFF * max(spectral.lp_norm(x, 2) for x in (du, flux_u, div_Ru)))
        fm.append(ROUNDOFF * max(spectral.lp_norm(x, 2) for x in (dB, flux_B, div_RB)))
        if nt >= 5 and 2 <= i <= nt - 3:
            ev.append(spectral.lp_norm(spectral.leray_project(du - _d4(s.u, i, dt)), 2))
            em.append(spectral.lp_norm(dB - _d4(s.B, i, dt), 2))
        else:
            ev.append(np.nan)
            em.append(np.nan)
    ev, em = _fill_edges(np.array(ev)), _fill_edges(np.array(em))
    return WeakResidual(s.times[idx], np.array(rv), np.array(rm), ev, em, np.array(fv), np.array(fm))


def _fill_edges(e):
    ok = np.isfinite(e)
    if not ok.any():
        return np.zeros_like(e)
    pos = np.arange(len(e))
    return np.interp(pos, pos[ok], e[ok])


def convergence_order(errors, factor=2.0):
    """Observed orders log(e_k / e_{k+1}) / log(factor) for a refinement sequence."""
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / math.log(factor)


# ---------------------------------------------------------------- helicity growth

def helicity_closed_form(t, lambda0):
    """Magnetic helicity of the level-0 field: t^2 / ((2 pi)^3 lambda0^{1/2})."""
    return np.asarray(t) ** 2 / ((2 * np.pi) ** 3 * math.sqrt(lambda0))


def helicity_asymptotic_bound(params):
    """Closed-form bound on |H - H_0| in terms of a, b, beta (geometric sums)."""
    a, b, beta = params.a, params.b, params.beta
    s1 = 2 * (2 * np.pi) ** 1.5 / a / (1 - 1 / a)
    x = a ** (-beta * b)
    s2 = x / (1 - x) / (math.sqrt(a) * (2 * np.pi) ** 1.5)
    return s1 + s2


@dataclass
class HelicityRow:
    q: int
    t: float
    helicity: float
    helicity0: float
    deviation: float
    A_diff: float  # ||A - A_0||_L2
    B_diff: float  # ||B - B_0||_L2
    B_norm: float
    A0_norm: float

    @property
    def product_bound(self):
        return self.A_diff * self.B_norm + self.A0_norm * self.B_diff

    def reduced_bound(self, lambda0):
        """Form with ||B|| <= 1 and ||A_0|| <= (2 pi)^{-3/2} lambda0^{-1/2} substituted."""
        return self.A_diff + self.B_diff / (math.sqrt(lambda0) * (2 * np.pi) ** 1.5)


@dataclass
class HelicityReport:
    rows: list
    lambda0: float
    asymptotic_bound: float
    doubling: dict = field(default_factory=dict)

    def table(self):
        head = ["q", "t", "H_BB", "H_0BB", "|H-H0|", "||A-A0||", "||B-B0||", "product_bound", "reduced_bound"]
        out = [head]
        for r in self.rows:
            out.append([str(r.q), f"{r.t:.6g}", f"{r.helicity:.6e}", f"{r.helicity0:.6e}", f"{r.deviation:.6e}",
                        f"{r.A_diff:.6e}", f"{r.B_diff:.6e}", f"{r.product_bound:.6e}",
                        f"{r.reduced_bound(self.lambda0):.6e}"])
        return out


def helicity_growth_report(states, params) -> HelicityReport:
    """Helicity per level and slice against the level-0 closed form.

    The deviation |H - H_0| is compared with both sides of the Cauchy-Schwarz
    estimate, measured directly. The doubling statement (H(1) >= 2/3 H_0(1)
    and |H(0)| <= 1/3 H_0(1)) is evaluated but not asserted.
    """
    lam0 = float(params_mod.lambda_exact(params, 0))
    base = states[0]
    if base.q != 0:
        base = initial_state(params, base.times, base.grid)
    rows = []
    for s in states:
        for i, t in enumerate(s.times):
            k = int(np.argmin(np.abs(base.times - t)))
            if abs(base.times[k] - t) > 1e-9:
                continue
            B, B0 = s.B[i], base.B[k]
            A, A0 = spectral.biot_savart(B), spectral.biot_savart(B0)
            h = magnetic_helicity(B)
            h0 = float(helicity_closed_form(t, lam0))
            rows.append(HelicityRow(s.q, float(t), h, h0, abs(h - h0), spectral.lp_norm(A - A0, 2),
                                    spectral.lp_norm(B - B0, 2), spectral.lp_norm(B, 2),
                                    spectral.lp_norm(A0, 2)))
    rep = HelicityReport(rows, lam0, helicity_asymptotic_bound(params))
    last = [r for r in rows if r.q == states[-1].q]
    h1 = [r for r in last if abs(r.t - 1.0) < 1e-9]
    h0 = [r for r in last if abs(r.t) < 1e-9]
    if h1 and h0:
        ref = float(helicity_closed_form(1.0, lam0))
        rep.doubling = {"H(1)": h1[0].helicity, "H(0)": h0[0].helicity, "H_0(1)": ref,
                        "H(1) >= 2/3 H_0(1)": h1[0].helicity >= 2 * ref / 3,
                        "|H(0)| <= 1/3 H_0(1)": abs(h0[0].helicity) <= ref / 3}
    return rep


# ---------------------------------------------------------------- decorrelation

@dataclass
class DecorrelationRow:
    kappa: int
    zeta: float
    measured: float  # ||a phi_(k)||_L2
    independent: float  # ||a||_L2 (8 pi^3)^{-1/2} ||phi_(k)||_L2
    ratio: float
    c_f: float
    bound_ratio: float  # measured / (C_f ||phi_(k)||_L2), an empirical C_*


def derivative_ladder(a, jmax=3):
    """||D^j a||_L2 for j = 0..jmax (Frobenius over all index slots)."""
    out = [spectral.lp_norm(a, 2)]
    cur = a
    for _ in range(jmax):
        comps = cur.reshape((-1,) + cur.shape[-3:])
        cur = np.concatenate([spectral.gradient(c) for c in comps])
        out.append(spectral.lp_norm(cur, 2))
    return np.array(out)


def decorrelation_report(a, block, zeta=None, jmax=3) -> DecorrelationRow:
    """Measured ||a phi|| against the independence prediction and the decorrelation bound.

    C_f = max_j ||D^j a||_L2 / zeta^j; zeta defaults to the smallest value
    for which the ladder is bounded by ||a||_L2 zeta^j.
    """
    ladder = derivative_ladder(a, jmax)
    if zeta is None:
        base = max(ladder[0], 1e-300)
        zeta = max([1.0] + [(ladder[j] / base) ** (1.0 / j) for j in range(1, jmax + 1)])
    c_f = float(max(ladder[j] / zeta ** j for j in range(jmax + 1)))
    g = spectral._same_grid(a)
    phi_norm = spectral.lp_norm(block.phi, 2, g)
    meas = spectral.lp_norm(a * block.phi, 2, g)
    indep = ladder[0] * (2 * np.pi) ** -1.5 * phi_norm
    return DecorrelationRow(block.kappa, float(zeta), meas, float(indep), float(meas / max(indep, 1e-300)), c_f,
                            float(meas / max(c_f * phi_norm, 1e-300)))


def decorrelation_sweep(a, frame, kappas, grid, r=1.0):
    """Decorrelation rows over a sweep of block periodicities kappa = r lambda."""
    prof = blocks.make_profile()
    rows = []
    for kap in kappas:
        blk = blocks.sample_block(prof, frame, kap / r, r, grid, lattice="minimal", mode="bandlimited")
        rows.append(decorrelation_report(a, blk))
    return rows


# ---------------------------------------------------------------- report

COLUMNS = (["q", "t", "energy", "cross_helicity", "magnetic_helicity"]
           + [f"{name}_L{'inf' if p == np.inf else p}" for name in ("u", "B", "R_u", "R_B") for p in NORM_PS]
           + ["u_C1", "B_C1", "residual_u", "residual_B", "residual_tol_u", "residual_tol_B"])


@dataclass
class DiagnosticsReport:
    q: int
    rows: list  # list of dicts keyed by COLUMNS
    margins: list = field(default_factory=list)
    audits: dict = field(default_factory=dict)

    def check_finite(self):
        for r in self.rows:
            for k, v in r.items():
                if isinstance(v, float) and not math.isfinite(v):
                    raise InternalError(f"non-finite diagnostic {k} at t={r['t']}")


def diagnose(s: State, margins=None, audits=None, strict_products=False) -> DiagnosticsReport:
    """Per-slice functionals, norms and residuals of one level."""
    res = weak_residual(s, strict_products) if len(s.times) >= 3 else None
    rows = []
    for i, t in enumerate(s.times):
        r = {"q": s.q, "t": float(t), "energy": energy(s.u[i], s.B[i]),
             "cross_helicity": cross_helicity(s.u[i], s.B[i]),
             "magnetic_helicity": magnetic_helicity(s.B[i])}
        for name, f in (("u", s.u[i]), ("B", s.B[i]), ("R_u", s.R_u[i]), ("R_B", s.R_B[i])):
            for p in NORM_PS:
                r[f"{name}_L{'inf' if p == np.inf else p}"] = spectral.lp_norm(f, p)
        r["u_C1"] = spectral.c1_surrogate(s.u[i])
        r["B_C1"] = spectral.c1_surrogate(s.B[i])
        j = i - 1
        interior = res is not None and 0 <= j < len(res.times)
        r["residual_u"] = float(res.velocity[j]) if interior else 0.0
        r["residual_B"] = float(res.magnetic[j]) if interior else 0.0
        r["residual_tol_u"] = float(res.velocity_tolerance[j]) if interior else 0.0
        r["residual_tol_B"] = float(res.magnetic_tolerance[j]) if interior else 0.0
        rows.append(r)
    rep = DiagnosticsReport(s.q, rows, list(margins or []), dict(audits or {}))
    rep.check_finite()
    return rep


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(reports, path_or_buf, config_hash=""):
    """CSV with a versioned header; one row per slice per level, no timestamps."""
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    buf = open(path_or_buf, "w", newline="\n") if own else path_or_buf
    try:
        buf.write(f"# {SCHEMA}\n# config_hash={config_hash}\n")
        buf.write(",".join(COLUMNS) + "\n")
        for rep in reports:
            for r in rep.rows:
                buf.write(",".join(_fmt(r[c]) for c in COLUMNS) + "\n")
    finally:
        if own:
            buf.close()


def read_csv(path):
    """Inverse of write_csv: (config_hash, list of row dicts)."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != f"# {SCHEMA}":
        raise ValueError(f"{path}: not a {SCHEMA} file")
    chash = lines[1].split("=", 1)[1]
    cols = lines[2].split(",")
    rows = [dict(zip(cols, (float(x) for x in ln.split(",")))) for ln in lines[3:] if ln]
    return chash, rows


def summary(rep: DiagnosticsReport) -> str:
    """Human-readable summary of one level."""
    out = io.StringIO()
    out.write(f"level q={rep.q}: {len(rep.rows)} slices\n")
    head = ["t", "energy", "cross_hel", "mag_hel", "res_u", "tol_u", "res_B", "tol_B"]
    out.write("  ".join(h.rjust(13) for h in head) + "\n")
    for r in rep.rows:
        vals = [r["t"], r["energy"], r["cross_helicity"], r["magnetic_helicity"], r["residual_u"],
                r["residual_tol_u"], r["residual_B"], r["residual_tol_B"]]
        out.write("  ".join(f"{v:13.5e}" for v in vals) + "\n")
    for k in sorted(rep.audits):
        out.write(f"audit {k}: {rep.audits[k]:.3e}\n")
    if rep.margins:
        from .iteration import format_margins
        out.write(format_margins(rep.margins) + "\n")
    return out.getvalue()
