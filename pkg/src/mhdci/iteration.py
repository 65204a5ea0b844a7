"""One convex-integration step q -> q+1 for the relaxed MHD system.

The relaxed system on T^3 x [t0, t1] reads

    d_t u + div(u (x) u - B (x) B) + grad p = div R_u      (R_u symmetric, trace-free)
    d_t B + div(u (x) B - B (x) u)          = div R_B      (R_B skew)

with the tensor divergence contracting the second index. A step mollifies
the level-q fields, builds amplitudes and intermittent perturbations w, d,
and assembles the level-(q+1) stresses and pressure piece by piece. Every
piece is computed exactly on the grid, so the level-(q+1) residual equals
the time-derivative mismatch of the perturbation plus the mollified level-q
residual.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import amplitudes, blocks, geometry, invdiv, params as params_mod, spectral
from .spectral import Grid3, outer_product, symmetric_traceless

FD4_MARGIN = 2


class InternalError(AssertionError):
    """A structural identity that holds by construction was violated."""


@dataclass
class State:
    q: int
    times: np.ndarray
    u: np.ndarray  # (nt, 3, n, n, n)
    B: np.ndarray
    p: np.ndarray  # (nt, n, n, n)
    R_u: np.ndarray  # (nt, 3, 3, n, n, n)
    R_B: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def grid(self):
        return Grid3(self.u.shape[-1])

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def t_domain(self):
        return float(self.times[0]), float(self.times[-1])

    def __len__(self):
        return len(self.times)


# ---------------------------------------------------------------- time grids

def mollifier_halfwidth(dt, ell):
    j, _ = spectral.time_mollifier_weights(dt, ell)
    return int(np.max(np.abs(j)))


def slices_consumed(params, q, dt):
    """Slices lost on each side of the window by the step q -> q+1."""
    ell = params_mod.derive_scales(params, q).ell
    return mollifier_halfwidth(dt, ell) + FD4_MARGIN


def time_grid(params):
    """Level-0 times such that level q_max lands on time_n slices over [0, t_end].

    Returns (times, offsets) where offsets[q] is the number of slices level q
    extends beyond the final window on each side.
    """
    dt = params.t_end / (params.time_n - 1)
    offsets = [0] * (params.q_max + 1)
    for q in range(params.q_max - 1, -1, -1):
        offsets[q] = offsets[q + 1] + slices_consumed(params, q, dt)
    pad = offsets[0] * dt
    if params.t_pad is not None and params.t_pad + 1e-12 < pad:
        raise spectral.PaddingError(f"t_pad={params.t_pad:g} is smaller than the required padding {pad:g}")
    m = offsets[0]
    times = dt * (np.arange(params.time_n + 2 * m) - m)
    return times, offsets


# ---------------------------------------------------------------- level-0 data

def _sqrt_lambda0(params):
    lam0 = params_mod.lambda_exact(params, 0)
    root = math.isqrt(lam0)
    if root * root != lam0:
        raise ValueError(f"lambda_0 = {lam0} is not a perfect square; sin(lambda_0^(1/2) x3) is not periodic")
    return root


def initial_state(params, times=None, grid: Grid3 | None = None) -> State:
    """Closed-form level-0 fields and stresses sampled on a time grid.

    u_0 = t (2 pi)^(-3/2) (sin m x3, 0, 0), B_0 = t (2 pi)^(-3) (sin m x3, cos m x3, 0)
    with m = lambda_0^(1/2); the stresses are time independent and p_0 = 0.
    """
    grid = grid or Grid3(params.grid_n)
    if times is None:
        times, _ = time_grid(params)
    m = _sqrt_lambda0(params)
    if m >= grid.n // 2:
        raise ValueError(f"grid n={grid.n} does not resolve lambda_0^(1/2) = {m}")
    _, _, x3 = grid.coords()
    s = np.broadcast_to(np.sin(m * x3), grid.shape)
    c = np.broadcast_to(np.cos(m * x3), grid.shape)
    cu = (2 * np.pi) ** -1.5
    cb = (2 * np.pi) ** -3.0
    nt = len(times)
    u = np.zeros((nt, 3) + grid.shape)
    B = np.zeros((nt, 3) + grid.shape)
    for i, t in enumerate(times):
        u[i, 0] = t * cu * s
        B[i, 0] = t * cb * s
        B[i, 1] = t * cb * c
    Ru = np.zeros((3, 3) + grid.shape)
    Ru[0, 2] = Ru[2, 0] = -c * cu / m
    RB = np.zeros((3, 3) + grid.shape)
    RB[0, 2] = -c * cb / m
    RB[2, 0] = c * cb / m
    RB[1, 2] = s * cb / m
    RB[2, 1] = -s * cb / m
    R_u = np.broadcast_to(Ru, (nt,) + Ru.shape).copy()
    R_B = np.broadcast_to(RB, (nt,) + RB.shape).copy()
    p = np.zeros((nt,) + grid.shape)
    return State(0, np.asarray(times, dtype=float), u, B, p, R_u, R_B, {"kind": "initial", "sqrt_lambda0": m})


def shear_state(params, times, grid: Grid3 | None = None, amplitude=0.05) -> State:
    """Exact level-0 state with fields quadratic in time.

    Horizontal fields depending on x3 only make every nonlinear term vanish,
    so u = amplitude (t U + t^2/2 V), B likewise, with R_u = R(d_t u) and
    R_B = R^B(d_t B). The stresses are linear in t, which a symmetric
    unit-mass time mollifier reproduces exactly, and centered differences
    are exact on quadratics, so the level-0 residual vanishes identically.
    """
    grid = grid or Grid3(params.grid_n)
    _, _, x3 = grid.coords()
    z = np.zeros(grid.shape)
    U = np.stack([np.sin(x3) + z, np.cos(2 * x3) + z, z])
    V = np.stack([np.cos(x3) + z, 0.5 * np.sin(x3) + z, z])
    Ub = np.stack([np.cos(x3) + z, np.sin(2 * x3) + z, z])
    Vb = np.stack([0.5 * np.sin(2 * x3) + z, np.cos(x3) + z, z])
    RU, RV = invdiv.inv_div_sym(U), invdiv.inv_div_sym(V)
    RUb, RVb = invdiv.inv_div_skew(Ub), invdiv.inv_div_skew(Vb)
    nt = len(times)
    u = np.empty((nt, 3) + grid.shape)
    B = np.empty((nt, 3) + grid.shape)
    R_u = np.empty((nt, 3, 3) + grid.shape)
    R_B = np.empty((nt, 3, 3) + grid.shape)
    A = amplitude
    for i, t in enumerate(times):
        u[i] = A * (t * U + 0.5 * t * t * V)
        B[i] = A * (t * Ub + 0.5 * t * t * Vb)
        R_u[i] = A * (RU + t * RV)
        R_B[i] = A * (RUb + t * RVb)
    p = np.zeros((nt,) + grid.shape)
    return State(0, np.asarray(times, dtype=float), u, B, p, R_u, R_B, {"kind": "shear", "amplitude": A})


# ---------------------------------------------------------------- mollification

@dataclass
class MollifiedFields:
    times: np.ndarray
    u: np.ndarray
    B: np.ndarray
    R_u: np.ndarray
    R_B: np.ndarray
    R_comm_u: np.ndarray
    R_comm_B: np.ndarray
    p: np.ndarray
    halfwidth: int
    ell: float


def _mollify(values, dt, ell):
    vals, h = spectral.mollify_time_array(values, dt, ell)
    return np.stack([spectral.mollify_space(v, ell) for v in vals]), h


def mollify_state(s: State, ell, strict_products=False) -> MollifiedFields:
    """Space-time mollification plus the commutator stresses and p_ell."""
    dt = s.dt
    u_l, h = _mollify(s.u, dt, ell)
    B_l, _ = _mollify(s.B, dt, ell)
    Ru_l, _ = _mollify(s.R_u, dt, ell)
    RB_l, _ = _mollify(s.R_B, dt, ell)
    p_l, _ = _mollify(s.p, dt, ell)
    nt = len(s.times)
    quad_u = np.empty((nt, 3, 3) + s.grid.shape)
    quad_B = np.empty((nt, 3, 3) + s.grid.shape)
    energy = np.empty((nt,) + s.grid.shape)
    for i in range(nt):
        uu = outer_product(s.u[i], s.u[i], strict_products) - outer_product(s.B[i], s.B[i], strict_products)
        energy[i] = spectral.trace(uu)
        quad_u[i] = symmetric_traceless(uu)
        ub = outer_product(s.u[i], s.B[i], strict_products)
        quad_B[i] = ub - np.swapaxes(ub, 0, 1)
    quad_u, _ = _mollify(quad_u, dt, ell)
    quad_B, _ = _mollify(quad_B, dt, ell)
    energy, _ = _mollify(energy, dt, ell)
    m = len(u_l)
    comm_u = np.empty_like(quad_u)
    comm_B = np.empty_like(quad_B)
    for j in range(m):
        uu = outer_product(u_l[j], u_l[j], strict_products) - outer_product(B_l[j], B_l[j], strict_products)
        ub = outer_product(u_l[j], B_l[j], strict_products)
        comm_u[j] = symmetric_traceless(symmetric_traceless(uu) - quad_u[j])
        comm_B[j] = (ub - np.swapaxes(ub, 0, 1)) - quad_B[j]
        p_l[j] = p_l[j] + (energy[j] - spectral.trace(uu)) / 3.0
    return MollifiedFields(s.times[h: nt - h], u_l, B_l, Ru_l, RB_l, comm_u, comm_B, p_l, h, ell)


# ---------------------------------------------------------------- blocks and amplitudes

@dataclass
class BlockSet:
    blocks: list  # IntermittentBlock per frame, ordered as geometry.all_frames()
    lam: float
    r: float
    kappa: int

    @property
    def n_B(self):
        return len(geometry.lambda_B())


def make_blocks(params, q, grid: Grid3, mode="bandlimited", strict_products=False, force=False,
                alias_free_squares="auto"):
    lam, r, kappa = params_mod.block_scale(params, q)
    prof = blocks.make_profile()
    out = [blocks.sample_block(prof, f, lam, r, grid, lattice=params.lattice, mode=mode,
                               force=force, strict_products=strict_products,
                               alias_free_squares=alias_free_squares)
           for f in geometry.all_frames()]
    return BlockSet(out, lam, r, kappa)


def amplitude_fields(mf: MollifiedFields, scales, params):
    """a_(k) on every mollified slice, ordered as geometry.all_frames(); also rho_u, rho_B."""
    nB = len(geometry.lambda_B())
    m = len(mf.times)
    nf = len(geometry.all_frames())
    a = np.empty((m, nf) + mf.u.shape[-3:])
    rho_u = np.empty((m,) + mf.u.shape[-3:])
    rho_B = np.empty_like(rho_u)
    ratios = []
    for j in range(m):
        mag = amplitudes.magnetic_amplitudes(mf.R_B[j], scales.delta_q1, params.c_B)
        vel = amplitudes.velocity_amplitudes(mf.R_u[j], mag.G, scales.delta_q1, params.c_u)
        a[j, :nB] = mag.a
        a[j, nB:] = vel.a
        rho_u[j] = vel.rho
        rho_B[j] = mag.rho
        ratios.append((mag.ratio_max, vel.ratio_max))
    return a, rho_u, rho_B, ratios


# ---------------------------------------------------------------- perturbation

def _cvec(v, ndim=3):
    return np.asarray(v, dtype=float).reshape((3,) + (1,) * ndim)


def _cmat(M, ndim=3):
    return np.asarray(M, dtype=float).reshape((3, 3) + (1,) * ndim)


@dataclass
class PerturbationBundle:
    w_p: np.ndarray
    d_p: np.ndarray
    w_c: np.ndarray
    d_c: np.ndarray
    dt_w: np.ndarray
    dt_d: np.ndarray
    a: np.ndarray
    blocks: BlockSet

    @property
    def w(self):
        return self.w_p + self.w_c

    @property
    def d(self):
        return self.d_p + self.d_c


def _potentials(coef, bset: BlockSet):
    """(sum_k c_k W_k^c, sum_{k in Lambda_B} c_k D_k^c)."""
    shape = coef.shape[1:]
    Pw = np.zeros((3,) + shape)
    Pd = np.zeros((3,) + shape)
    nB = bset.n_B
    for i, blk in enumerate(bset.blocks):
        Wc, Dc = blocks.corrector_potentials(blk)
        Pw += coef[i] * Wc
        if i < nB:
            Pd += coef[i] * Dc
    return Pw, Pd


def build_perturbation(a, dt_a, bset: BlockSet) -> PerturbationBundle:
    """Principal parts, correctors and time derivatives on one slice.

    w = curl curl sum a_k W_k^c and d = curl curl sum a_k D_k^c are exactly
    solenoidal; the principal parts are sum a_k phi_k k1 and sum a_k phi_k k2,
    and the correctors are the differences. d_t a enters only inside the
    potentials.
    """
    shape = a.shape[1:]
    nB = bset.n_B
    w_p = np.zeros((3,) + shape)
    d_p = np.zeros((3,) + shape)
    for i, blk in enumerate(bset.blocks):
        f = blk.frame
        s = a[i] * blk.phi
        w_p += _cvec(f.vec("k1")) * s
        if i < nB:
            d_p += _cvec(f.vec("k2")) * s
    Pw, Pd = _potentials(a, bset)
    w = spectral.curl(spectral.curl(Pw))
    d = spectral.curl(spectral.curl(Pd))
    Pw, Pd = _potentials(dt_a, bset)
    dt_w = spectral.curl(spectral.curl(Pw))
    dt_d = spectral.curl(spectral.curl(Pd))
    return PerturbationBundle(w_p, d_p, w - w_p, d - d_p, dt_w, dt_d, a, bset)


# ---------------------------------------------------------------- stresses

def _antisym(x, y, strict):
    t = outer_product(x, y, strict)
    return t - np.swapaxes(t, 0, 1)


def _frame_dyads(f):
    k1, k2 = f.vec("k1"), f.vec("k2")
    return k1, k2


def oscillation_sums(bundle: PerturbationBundle):
    """Self-interaction sums T and explicit cross-interaction sums X.

    T_B = sum_{Lambda_B} a^2 (phi^2 - 1)(k1 (x) k2 - k2 (x) k1)
    T_u = sum_{Lambda_u} a^2 (phi^2 - 1) k1 (x) k1 + sum_{Lambda_B} a^2 (phi^2 - 1)(k1 (x) k1 - k2 (x) k2)
    X_B = sum over pairs (k != k') of a a' phi phi' (k1 (x) k2' - k2' (x) k1), k' in Lambda_B
    X_u = sum over pairs (k != k') of a a' phi phi' (k1 (x) k1' - k2 (x) k2'),
          the k2 terms only when both frames are in Lambda_B.
    Also returns D = sum a^2 phi^2 M (the diagonal of w_p (x) w_p - d_p (x) d_p).
    """
    bset = bundle.blocks
    a = bundle.a
    nB = bset.n_B
    shape = a.shape[1:]
    T_B = np.zeros((3, 3) + shape)
    T_u = np.zeros((3, 3) + shape)
    X_B = np.zeros((3, 3) + shape)
    X_u = np.zeros((3, 3) + shape)
    diag_u = np.zeros((3, 3) + shape)
    diag_B = np.zeros((3, 3) + shape)
    amp = [a[i] * blk.phi for i, blk in enumerate(bset.blocks)]
    for i, blk in enumerate(bset.blocks):
        k1, k2 = _frame_dyads(blk.frame)
        a2 = a[i] ** 2
        fluct = a2 * (blk.phi ** 2 - 1.0)
        full = amp[i] ** 2
        Mu = np.outer(k1, k1) - (np.outer(k2, k2) if i < nB else 0.0)
        T_u += _cmat(Mu) * fluct
        diag_u += _cmat(Mu) * full
        if i < nB:
            MB = np.outer(k1, k2) - np.outer(k2, k1)
            T_B += _cmat(MB) * fluct
            diag_B += _cmat(MB) * full
    frames = [blk.frame for blk in bset.blocks]
    for i in range(len(frames)):
        k1 = frames[i].vec("k1")
        for j in range(nB):
            if j == i:
                continue
            k2p = frames[j].vec("k2")
            s = amp[i] * amp[j]
            X_B += _cmat(np.outer(k1, k2p) - np.outer(k2p, k1)) * s
    for i in range(len(frames)):
        for j in range(i + 1, len(frames)):
            k1, k1p = frames[i].vec("k1"), frames[j].vec("k1")
            M = np.outer(k1, k1p) + np.outer(k1p, k1)
            if i < nB and j < nB:
                k2, k2p = frames[i].vec("k2"), frames[j].vec("k2")
                M = M - np.outer(k2, k2p) - np.outer(k2p, k2)
            X_u += _cmat(M) * (amp[i] * amp[j])
    return T_u, T_B, X_u, X_B, diag_u, diag_B


def _zero_mean(f):
    return f - f.mean()


@dataclass
class StressPieces:
    R_u: np.ndarray
    R_B: np.ndarray
    p: np.ndarray
    audit: dict


def assemble_stresses(u_l, B_l, R_l_u, R_l_B, R_comm_u, R_comm_B, p_l, rho_u,
                      bundle: PerturbationBundle, strict_products=False) -> StressPieces:
    """Level-(q+1) stresses and pressure on one slice."""
    sp = strict_products
    w, d = bundle.w, bundle.d
    wp, dp, wc, dc = bundle.w_p, bundle.d_p, bundle.w_c, bundle.d_c
    audit = {}

    # linear pieces
    lin_B = invdiv.inv_div_skew(bundle.dt_d) + _antisym(u_l, d, sp) + _antisym(w, B_l, sp)
    sym_lin = (outer_product(u_l, w, sp) + outer_product(w, u_l, sp)
               - outer_product(B_l, d, sp) - outer_product(d, B_l, sp))
    lin_u = invdiv.inv_div_sym(bundle.dt_w) + symmetric_traceless(sym_lin)
    p_lin = spectral.trace(sym_lin) / 3.0

    # oscillation pieces
    T_u, T_B, X_u_pairs, X_B_pairs, diag_u, diag_B = oscillation_sums(bundle)
    quad_B = _antisym(wp, dp, sp)
    quad_u = outer_product(wp, wp, sp) - outer_product(dp, dp, sp)
    X_B = quad_B - diag_B
    X_u = quad_u - diag_u
    div_TB = spectral.tensor_divergence(T_B)
    div_Tu = spectral.tensor_divergence(T_u)
    osc_B = invdiv.inv_div_skew(div_TB) + X_B
    osc_u = invdiv.inv_div_sym(div_Tu) + symmetric_traceless(X_u)
    p_osc = rho_u + spectral.trace(X_u) / 3.0

    mean_lhs = spectral.spatial_mean(quad_B + R_l_B)
    mean_rhs = spectral.spatial_mean(T_B + X_B_pairs)
    audit["zero_mode_B"] = float(np.max(np.abs(mean_lhs - mean_rhs)))
    eye = np.eye(3).reshape((3, 3, 1, 1, 1))
    mean_lhs = spectral.spatial_mean(quad_u + R_l_u)
    mean_rhs = spectral.spatial_mean(rho_u * eye + T_u + X_u_pairs)
    audit["zero_mode_u"] = float(np.max(np.abs(mean_lhs - mean_rhs)))
    scale_B = max(float(np.max(np.abs(X_B))), 1e-300)
    audit["cross_sum_defect_B"] = float(np.max(np.abs(X_B - X_B_pairs))) / scale_B
    scale_u = max(float(np.max(np.abs(X_u))), 1e-300)
    audit["cross_sum_defect_u"] = float(np.max(np.abs(X_u - X_u_pairs))) / scale_u
    audit["contracted_form_defect_B"] = _contracted_defect(bundle, div_TB)

    # corrector pieces
    corr_B = _antisym(wc, d, sp) + _antisym(wp, dc, sp)
    sym_corr = (outer_product(w, wc, sp) + outer_product(wc, wp, sp)
                - outer_product(d, dc, sp) - outer_product(dc, dp, sp))
    corr_u = symmetric_traceless(sym_corr)
    p_corr = spectral.trace(sym_corr) / 3.0

    R_B = spectral.skew_part(lin_B + osc_B + corr_B + R_comm_B)
    R_u = symmetric_traceless(lin_u + osc_u + corr_u + R_comm_u)
    p = _zero_mean(p_l) - _zero_mean(p_lin) - _zero_mean(p_osc) - _zero_mean(p_corr)
    audit["p_pieces_l2"] = {k: spectral.lp_norm(_zero_mean(v), 2) for k, v in
                            (("p_lin", p_lin), ("p_osc", p_osc), ("p_corr", p_corr))}
    audit["stress_pieces_l1"] = {
        "lin_u": spectral.lp_norm(lin_u, 1), "osc_u": spectral.lp_norm(osc_u, 1),
        "corr_u": spectral.lp_norm(corr_u, 1), "comm_u": spectral.lp_norm(R_comm_u, 1),
        "lin_B": spectral.lp_norm(lin_B, 1), "osc_B": spectral.lp_norm(osc_B, 1),
        "corr_B": spectral.lp_norm(corr_B, 1), "comm_B": spectral.lp_norm(R_comm_B, 1),
    }
    check_structure(R_u, R_B)
    return StressPieces(R_u, R_B, p, audit)


def _contracted_defect(bundle, div_TB):
    """Relative gap between div T_B and the contracted form sum grad(a^2)(phi^2 - 1) M.

    Zero in exact arithmetic; on the grid it measures how far the sampled
    phi^2 departs from a function of k.x alone (aliasing).
    """
    bset = bundle.blocks
    out = np.zeros_like(div_TB)
    for i in range(bset.n_B):
        blk = bset.blocks[i]
        k1, k2 = _frame_dyads(blk.frame)
        g = spectral.gradient(bundle.a[i] ** 2)
        fl = blk.phi ** 2 - 1.0
        # (k1 (x) k2 - k2 (x) k1) contracted with grad on the second index
        out += (_cvec(k1) * np.tensordot(k2, g, axes=(0, 0)) - _cvec(k2) * np.tensordot(k1, g, axes=(0, 0))) * fl
    den = max(spectral.lp_norm(div_TB, 2), 1e-300)
    return spectral.lp_norm(out - div_TB, 2) / den


def check_structure(R_u, R_B, tol=1e-12):
    sym = float(np.max(np.abs(R_u - np.swapaxes(R_u, 0, 1))))
    tr = float(np.max(np.abs(spectral.trace(R_u))))
    skew = float(np.max(np.abs(R_B + np.swapaxes(R_B, 0, 1))))
    scale = max(float(np.max(np.abs(R_u))), float(np.max(np.abs(R_B))), 1.0)
    if sym > tol * scale or tr > tol * scale:
        raise InternalError(f"Reynolds stress lost symmetry/trace-freeness: asym={sym:.3e}, trace={tr:.3e}")
    if skew > tol * scale:
        raise InternalError(f"magnetic stress lost skewness: {skew:.3e}")


# ---------------------------------------------------------------- the step

@dataclass
class StepReport:
    q: int
    scales: object
    block_scale: tuple
    audits: list
    margins: list
    block_info: list
    amplitude_ratios: list
    pressure_crosscheck: list
    solenoidality: dict

    def max_audit(self, key):
        return max(a[key] for a in self.audits)


def pressure_from_poisson(u, B, R_u, strict_products=False):
    """Mean-free p with Delta p = div div(-u (x) u + B (x) B + R_u)."""
    M = -outer_product(u, u, strict_products) + outer_product(B, B, strict_products) + R_u
    rhs = spectral.divergence(spectral.tensor_divergence(M))
    return -spectral.inv_neg_laplacian(rhs)


def step(s: State, params, strict_products=False, sampling="bandlimited", force=False,
         zero_magnetic=False) -> State:
    """Compose mollification, perturbation and stress assembly: level q -> q+1.

    Returns the level-(q+1) State on the shrunken time window; its meta holds
    a StepReport under "report". ``zero_magnetic`` forces d = 0 (a
    diagnostic switch that keeps B_{q+1} = B_ell).
    """
    q = s.q
    scales = params_mod.derive_scales(params, q)
    grid = s.grid
    mf = mollify_state(s, scales.ell, strict_products)
    bset = make_blocks(params, q, grid, sampling, strict_products, force)
    a, rho_u, _, ratios = amplitude_fields(mf, scales, params)
    dt = s.dt
    m = len(mf.times)
    if m < 2 * FD4_MARGIN + 1:
        raise spectral.PaddingError(f"window too short for the step at q={q}: {m} mollified slices")
    out_idx = range(FD4_MARGIN, m - FD4_MARGIN)
    nt = len(out_idx)
    u = np.empty((nt, 3) + grid.shape)
    B = np.empty_like(u)
    p = np.empty((nt,) + grid.shape)
    R_u = np.empty((nt, 3, 3) + grid.shape)
    R_B = np.empty_like(R_u)
    audits, cross = [], []
    for o, j in enumerate(out_idx):
        dt_a = (a[j - 2] - 8.0 * a[j - 1] + 8.0 * a[j + 1] - a[j + 2]) / (12.0 * dt)
        bundle = build_perturbation(a[j], dt_a, bset)
        if zero_magnetic:
            bundle.d_p[:] = 0.0
            bundle.d_c[:] = 0.0
            bundle.dt_d[:] = 0.0
        pieces = assemble_stresses(mf.u[j], mf.B[j], mf.R_u[j], mf.R_B[j], mf.R_comm_u[j], mf.R_comm_B[j],
                                   mf.p[j], rho_u[j], bundle, strict_products)
        u[o] = mf.u[j] + bundle.w
        B[o] = mf.B[j] + bundle.d
        p[o] = pieces.p
        R_u[o] = pieces.R_u
        R_B[o] = pieces.R_B
        audits.append(pieces.audit)
        p_check = pressure_from_poisson(u[o], B[o], R_u[o], strict_products)
        p_vis = spectral.drop_nyquist(p[o])
        den = max(float(np.max(np.abs(p_vis))), 1e-300)
        cross.append(float(np.max(np.abs(spectral.drop_nyquist(p_check) - p_vis))) / den)
        del bundle, pieces
    times = mf.times[FD4_MARGIN: m - FD4_MARGIN]
    sol = {
        "div_u": max(float(np.max(np.abs(spectral.divergence(x)))) for x in u),
        "div_B": max(float(np.max(np.abs(spectral.divergence(x)))) for x in B),
        "mean_u": float(np.max(np.abs(spectral.spatial_mean(u)))),
        "mean_B": float(np.max(np.abs(spectral.spatial_mean(B)))),
    }
    new = State(q + 1, times, u, B, p, R_u, R_B,
                {"kind": "step", "parent": s.meta.get("kind"), "strict_products": strict_products,
                 "sampling": sampling})
    margins = inductive_margins(s, new, params)
    report = StepReport(q, scales, (bset.lam, bset.r, bset.kappa), audits, margins,
                        [dict(b.info, frame=str(tuple(str(c) for c in b.frame.k))) for b in bset.blocks],
                        ratios, cross, sol)
    new.meta["report"] = report
    return new


# ---------------------------------------------------------------- inductive margins

@dataclass(frozen=True)
class Margin:
    name: str
    measured: float
    bound: float

    @property
    def margin(self):
        return self.bound - self.measured

    @property
    def holds(self):
        return self.measured <= self.bound

    def row(self):
        return [self.name, f"{self.measured:.6e}", f"{self.bound:.6e}", f"{self.margin:.6e}",
                "yes" if self.holds else "no"]


def _common(prev: State, new: State):
    """Indices of prev slices matching the new times."""
    idx = np.rint((new.times - prev.times[0]) / prev.dt).astype(int)
    if np.any(np.abs(prev.times[idx] - new.times) > 1e-9 * max(1.0, abs(prev.dt))):
        raise InternalError("time grids of consecutive levels do not align")
    return idx


def c1_time_surrogate(values, dt):
    """Grid max of |d_t f| by centered differences over interior slices."""
    if len(values) < 3:
        return 0.0
    return max(spectral.lp_norm((values[i + 1] - values[i - 1]) / (2 * dt), np.inf)
               for i in range(1, len(values) - 1))


def inductive_margins(prev: State, new: State, params) -> list:
    """Measured quantities of the inductive step against their target bounds.

    L^2, L^1 norms are the maximum over the slices of the new window.
    """
    sc = params_mod.derive_scales(params, prev.q)
    idx = _common(prev, new)
    half = math.sqrt(sc.delta_q1)
    du = max(spectral.lp_norm(new.u[i] - prev.u[k], 2) for i, k in enumerate(idx))
    dB = max(spectral.lp_norm(new.B[i] - prev.B[k], 2) for i, k in enumerate(idx))
    nu = max(spectral.lp_norm(x, 2) for x in new.u)
    nB = max(spectral.lp_norm(x, 2) for x in new.B)
    c1u = max(spectral.c1_surrogate(x) for x in new.u) + c1_time_surrogate(new.u, new.dt)
    c1B = max(spectral.c1_surrogate(x) for x in new.B) + c1_time_surrogate(new.B, new.dt)
    Ru = max(spectral.lp_norm(x, 1) for x in new.R_u)
    RB = max(spectral.lp_norm(x, 1) for x in new.R_B)
    lam1 = sc.lambda_q1
    return [
        Margin("||u_{q+1} - u_q||_L2", du, half),
        Margin("||B_{q+1} - B_q||_L2", dB, half),
        Margin("||u_{q+1}||_L2", nu, 1.0 - half),
        Margin("||B_{q+1}||_L2", nB, 1.0 - half),
        Margin("||u_{q+1}||_C1", c1u, lam1 ** 2),
        Margin("||B_{q+1}||_C1", c1B, lam1 ** 2),
        Margin("||R_u_{q+1}||_L1", Ru, params.c_u * sc.delta_q2),
        Margin("||R_B_{q+1}||_L1", RB, params.c_B * sc.delta_q2),
    ]


def format_margins(margins) -> str:
    head = ["quantity", "measured", "bound", "margin", "holds"]
    rows = [head] + [m.row() for m in margins]
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows)


def run(params, strict_products=False, sampling="bandlimited", grid=None, callback=None):
    """Initial state followed by q_max steps; returns the list of States."""
    grid = grid or Grid3(params.grid_n)
    times, _ = time_grid(params)
    states = [initial_state(params, times, grid)]
    if callback:
        callback(states[-1])
    for _ in range(params.q_max):
        states.append(step(states[-1], params, strict_products, sampling))
        if callback:
            callback(states[-1])
    return states


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_SCHEMA = "MHDCKPT v1"
_STATE_FIELDS = ("u", "B", "p", "R_u", "R_B")


def _manifest_value(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def save_checkpoint(s: State, directory, config_hash="", params=None):
    """Directory of field dumps plus a key = value manifest (no timestamps)."""
    os.makedirs(directory, exist_ok=True)
    files = []
    for i, t in enumerate(s.times):
        for name in _STATE_FIELDS:
            fname = f"slice{i:03d}_{name}.fld"
            spectral.write_field(os.path.join(directory, fname), getattr(s, name)[i], t)
            files.append(fname)
    lines = [f"schema = {CHECKPOINT_SCHEMA}", f"config_hash = {config_hash}", f"q = {s.q}",
             f"grid_n = {s.grid.n}", "times = " + ",".join(repr(float(t)) for t in s.times)]
    if params is not None:
        sc = params_mod.derive_scales(params, s.q)
        for key in ("lambda_q", "lambda_q1", "delta_q", "delta_q1", "delta_q2", "ell", "r", "r_lambda"):
            lines.append(f"scale_{key} = {_manifest_value(float(getattr(sc, key)))}")
    lines.append("files = " + ",".join(files))
    with open(os.path.join(directory, "manifest.txt"), "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(directory):
    out = {}
    with open(os.path.join(directory, "manifest.txt")) as fh:
        for ln in fh:
            if "=" in ln:
                k, v = ln.split("=", 1)
                out[k.strip()] = v.strip()
    if out.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"{directory}: not a {CHECKPOINT_SCHEMA} checkpoint")
    return out


def load_checkpoint(directory) -> State:
    man = read_manifest(directory)
    times = np.array([float(x) for x in man["times"].split(",")])
    data = {name: [] for name in _STATE_FIELDS}
    for i in range(len(times)):
        for name in _STATE_FIELDS:
            _, t, arr = spectral.read_field(os.path.join(directory, f"slice{i:03d}_{name}.fld"))
            if t != times[i]:
                raise ValueError(f"{directory}: slice {i} time {t!r} does not match manifest")
            data[name].append(arr)
    arrays = {k: np.stack(v) for k, v in data.items()}
    return State(int(man["q"]), times, meta={"config_hash": man.get("config_hash", ""), "checkpoint": str(directory)},
                 **arrays)
