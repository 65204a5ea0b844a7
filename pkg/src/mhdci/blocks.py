"""Profiles, intermittent shear blocks, corrector potentials and 1D/2D oracles.

The profile is Phi(x) = c exp(-1/(1-x^2)) on (-1, 1) with phi = -Phi''.
Every derivative of Phi has the closed form c exp(g) P(x) / (1-x^2)^m with
g = -1/(1-x^2) and P a polynomial, which is what ``Profile.derivative`` uses.

A block phi_(k)(x) = phi_r(kappa * (N k) . x) with kappa = r lambda an
integer and N k an integer vector depends on x only through an integer
phase, so its L^p norms over the 3-torus reduce exactly to 1D integrals and
supports of products of two blocks reduce to 2D integrals (the map
x -> (a.x, b.x) pushes the uniform measure of T^3 onto the uniform measure
of T^2 for independent integer vectors a, b).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate

from . import geometry, spectral
from .spectral import Grid3, TWO_PI

SUPPORT_THRESHOLD = 1e-12
TAIL_LEVEL = 1e-8


@lru_cache(maxsize=64)
def _derivative_terms(order):
    """(P, m) with d^order/dx^order exp(g) = exp(g) P / (1-x^2)^m."""
    one_minus = Polynomial([1.0, 0.0, -1.0])
    x = Polynomial([0.0, 1.0])
    P, m = Polynomial([1.0]), 0
    for _ in range(order):
        # d/dx [e^g P w^-m] with w = 1 - x^2, g' = -2x / w^2
        P = (P.deriv() * one_minus + 2 * m * x * P) * one_minus - 2 * x * P
        m = m + 2
    return P, m


def _eval_terms(x, order):
    P, m = _derivative_terms(order)
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    w = 1.0 - xi ** 2
    out[inside] = np.exp(-1.0 / w) * P(xi) / w ** m
    return out


@dataclass(frozen=True)
class Profile:
    """Normalized profile pair on the real line."""

    c: float

    def Phi(self, x, order=0):
        """order-th derivative of Phi."""
        return self.c * _eval_terms(x, order)

    def phi(self, x, order=0):
        """order-th derivative of phi = -Phi''."""
        return -self.c * _eval_terms(x, order + 2)

    def phi_r(self, y, r, order=0):
        """Rescaled profile r^{-1/2} phi(y/r), periodized on [-pi, pi); order-th derivative."""
        y = np.mod(np.asarray(y, dtype=float) + np.pi, TWO_PI) - np.pi
        return r ** (-0.5 - order) * self.phi(y / r, order)

    def Phi_r(self, y, r, order=0):
        y = np.mod(np.asarray(y, dtype=float) + np.pi, TWO_PI) - np.pi
        return r ** (-0.5 - order) * self.Phi(y / r, order)

    def phi_hat(self, xi):
        """Fourier transform int phi(z) exp(-i xi z) dz (real, even)."""
        return _cos_transform(self.phi, xi)

    def Phi_hat(self, xi):
        return _cos_transform(self.Phi, xi)

    def lp_norm(self, p, order=0):
        """||phi^(order)||_{L^p(R)}."""
        if p == np.inf:
            z = np.linspace(-1, 1, 200001)
            return float(np.max(np.abs(self.phi(z, order))))
        val, _ = integrate.quad(lambda z: abs(float(self.phi(np.array([z]), order)[0])) ** p, -1, 1,
                                limit=400, epsabs=0, epsrel=1e-12, points=_zeros_of(order))
        return val ** (1.0 / p)


@lru_cache(maxsize=16)
def _zeros_of(order):
    P, _ = _derivative_terms(order + 2)
    roots = [float(np.real(z)) for z in P.roots() if abs(np.imag(z)) < 1e-9 and abs(np.real(z)) < 1]
    return tuple(sorted(roots)) or None


def _cos_transform(f, xi, n_nodes=40001):
    """Cosine transform of a smooth function supported in [-1, 1].

    The trapezoid rule is spectrally accurate for smooth compactly supported
    integrands, so a uniform grid is enough.
    """
    z = np.linspace(-1.0, 1.0, n_nodes)
    fz = f(z) * (z[1] - z[0])
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    out = np.empty(xi.shape)
    for s in range(0, xi.size, 256):
        out[s:s + 256] = np.cos(np.outer(xi[s:s + 256], z)) @ fz
    return out


@lru_cache(maxsize=1)
def make_profile() -> Profile:
    """Profile with c chosen so that int phi^2 = 2 pi."""
    raw = Profile(1.0)
    val, _ = integrate.quad(lambda z: float(raw.phi(np.array([z]))[0]) ** 2, -1, 1,
                            limit=400, epsabs=0, epsrel=1e-13)
    return Profile(math.sqrt(TWO_PI / val))


@lru_cache(maxsize=4)
def effective_bandwidth(level=TAIL_LEVEL):
    """Frequency xi beyond which |phi_hat| stays below level * max|phi_hat|.

    Returns the bandwidth in units of the unscaled profile, so a block at
    (lambda, N) has its spectral tail below ``level`` past wavenumber
    N * lambda * bandwidth.
    """
    prof = make_profile()
    xi = np.linspace(0.0, 2000.0, 8001)
    vals = np.abs(prof.phi_hat(xi))
    peak = vals.max()
    above = np.nonzero(vals > level * peak)[0]
    return float(xi[above[-1]]) if len(above) else 0.0


# ---------------------------------------------------------------- blocks

def _phase(grid: Grid3, ivec, kappa):
    """kappa * (ivec . x) reduced to [-pi, pi) with exact integer arithmetic."""
    n = grid.n
    i = np.arange(n)
    c1, c2, c3 = ivec
    s = sum(ivec)
    # ivec . x / (2 pi) = -s/2 + (c . i)/n ; numerator over 2n
    num = (2 * (c1 * i[:, None, None] + c2 * i[None, :, None] + c3 * i[None, None, :]) - n * s) * kappa
    num = np.mod(num, 2 * n)
    return TWO_PI * num / (2 * n) - np.pi * (num >= n) * 2 + 0.0


@dataclass
class IntermittentBlock:
    frame: geometry.WaveVectorFrame
    lam: float
    r: float
    kappa: int  # r * lambda
    multiplier: int  # N with N k integral
    phi: np.ndarray
    Phi: np.ndarray
    mode: str
    info: dict = field(default_factory=dict)

    @property
    def ivec(self):
        return self.frame.lattice_vector(self.multiplier)


def profile_coefficients(r, count, prof=None):
    """Fourier coefficients (m = 0..count) of the periodized phi_r and Phi_r on T."""
    prof = prof or make_profile()
    m = np.arange(count + 1)
    scale = r ** 0.5 / TWO_PI
    cphi = scale * prof.phi_hat(m * r)
    cPhi = scale * prof.Phi_hat(m * r)
    cphi[0] = 0.0
    return cphi, cPhi


def max_harmonic(frame, multiplier, kappa, grid: Grid3, strict_products=False, alias_free_squares=False):
    """Largest profile harmonic whose wavevector fits strictly below Nyquist.

    With ``alias_free_squares`` the square phi_(k)^2 (twice the harmonics)
    must fit as well, so that it stays a function of k.x on the grid.
    """
    top = max(abs(c) for c in frame.lattice_vector(multiplier))
    limit = grid.n // 3 if strict_products else grid.n // 2 - 1
    if alias_free_squares:
        top *= 2
    return limit // (kappa * top)


def sample_block(profile, frame, lam, r, grid: Grid3, lattice="uniform", mode="pointwise",
                 force=False, strict_products=False, renormalize=True, alias_free_squares=False):
    """Sample phi_(k) and Phi_(k) on the grid.

    mode="pointwise" evaluates the periodized profile at the exact integer
    phase; mode="bandlimited" synthesizes the truncated Fourier series of the
    profile up to the largest harmonic that fits on the grid, renormalized so
    the grid mean of phi_(k)^2 is exactly one (the truncation deficit is
    reported). The band-limited block is a function of k.x on the grid, so
    its spectral gradient is exactly parallel to k. Both fields are projected
    to zero mean and the removed means are reported.

    alias_free_squares=True also keeps phi_(k)^2 below Nyquist; "auto" does
    so only where at least one harmonic survives (recorded in info).
    """
    kappa_f = r * lam
    kappa = int(round(kappa_f))
    if kappa < 1 or abs(kappa - kappa_f) > 1e-9 * max(1.0, kappa_f):
        raise ValueError(f"r*lambda = {kappa_f:.12g} is not a positive integer")
    N = geometry.frame_multiplier(frame, lattice)
    ivec = frame.lattice_vector(N)
    phase = _phase(grid, ivec, kappa)
    info = {}
    need = kappa * max(abs(c) for c in ivec) * effective_bandwidth() / r
    info["required_wavenumber"] = need
    info["resolved"] = need < grid.n / 2
    if mode == "pointwise":
        if not info["resolved"] and not force:
            raise ValueError(f"grid n={grid.n} does not resolve the block (needs wavenumber {need:.4g}); "
                             "use force=True")
        phi = profile.phi_r(phase, r)
        Phi = profile.Phi_r(phase, r)
    elif mode == "bandlimited":
        squares_clean = bool(alias_free_squares)
        M = max_harmonic(frame, N, kappa, grid, strict_products, squares_clean)
        if M < 1 and alias_free_squares == "auto":
            squares_clean = False
            M = max_harmonic(frame, N, kappa, grid, strict_products, False)
        if M < 1:
            raise ValueError(f"grid n={grid.n} cannot hold a single harmonic of frame k={frame.k}")
        cphi, cPhi = profile_coefficients(r, M, profile)
        energy = 2.0 * np.sum(cphi[1:] ** 2)
        info["truncation_deficit"] = 1.0 - energy
        info["harmonics"] = M
        info["squares_alias_free"] = squares_clean
        s = 1.0 / math.sqrt(energy) if renormalize else 1.0
        info["renormalization"] = s
        phi = np.zeros(grid.shape)
        Phi = np.full(grid.shape, cPhi[0] * s)
        for m in range(1, M + 1):
            cm = np.cos(m * phase)
            phi += 2.0 * s * cphi[m] * cm
            Phi += 2.0 * s * cPhi[m] * cm
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    info["removed_mean"] = float(phi.mean())
    info["removed_mean_Phi"] = float(Phi.mean())
    phi = phi - phi.mean()
    Phi = Phi - Phi.mean()
    info["mean_square"] = float(np.mean(phi ** 2))
    return IntermittentBlock(frame, float(lam), float(r), kappa, N, phi, Phi, mode, info)


def shear_fields(block: IntermittentBlock):
    """(W_(k), D_(k)) = (phi_(k) k1, phi_(k) k2)."""
    k1, k2 = block.frame.vec("k1"), block.frame.vec("k2")
    return k1[:, None, None, None] * block.phi, k2[:, None, None, None] * block.phi


def corrector_potentials(block: IntermittentBlock):
    """(W^c, D^c) = Phi_(k) (k1, k2) / (N^2 lambda^2)."""
    k1, k2 = block.frame.vec("k1"), block.frame.vec("k2")
    scale = 1.0 / (block.multiplier ** 2 * block.lam ** 2)
    return (scale * k1[:, None, None, None] * block.Phi, scale * k2[:, None, None, None] * block.Phi)


# ---------------------------------------------------------------- oracles

def norm_oracle_1d(profile, lam, r, p, M=0, multiplier=1, n_quad=None):
    """||grad^M phi_(k)||_{L^p(T^3)} from a 1D quadrature along k.

    grad^M phi_(k) = (kappa N)^M phi_r^(M)(phase) k^{(x)M}, |k| = 1, and the
    phase is uniformly distributed on T, so the 3D integral equals
    (2 pi)^2 * int_T |(kappa N)^M phi_r^(M)(y)|^p dy.
    """
    kappa = r * lam
    fac = (kappa * multiplier) ** M
    if p == np.inf:
        y = np.linspace(-r, r, 400001)
        return float(fac * np.max(np.abs(profile.phi_r(y, r, M))))
    n_quad = n_quad or 20001
    # the support of phi_r is [-r, r]; composite Simpson over it
    y = np.linspace(-r, r, n_quad)
    vals = np.abs(fac * profile.phi_r(y, r, M)) ** p
    integral = integrate.simpson(vals, x=y)
    return float((TWO_PI ** 2 * integral) ** (1.0 / p))


def product_norm_oracle(profile, r, p, r2=None, n_quad=20001):
    """||phi_(k) phi_(k')||_{L^p(T^3)} for independent k, k' (2D reduction)."""
    r2 = r2 or r
    y1 = np.linspace(-r, r, n_quad)
    y2 = np.linspace(-r2, r2, n_quad)
    i1 = integrate.simpson(np.abs(profile.phi_r(y1, r)) ** p, x=y1)
    i2 = integrate.simpson(np.abs(profile.phi_r(y2, r2)) ** p, x=y2)
    return float((TWO_PI * i1 * i2) ** (1.0 / p))


@lru_cache(maxsize=8)
def support_fraction(threshold=SUPPORT_THRESHOLD, n_fine=400001):
    """Length of {z in (-1,1): |phi(z)| > threshold * max|phi|}."""
    prof = make_profile()
    z = np.linspace(-1, 1, n_fine)
    v = np.abs(prof.phi(z))
    return float(np.count_nonzero(v > threshold * v.max()) * (z[1] - z[0]))


def support_measure_1d(r, threshold=SUPPORT_THRESHOLD):
    """Slab construction: |supp phi_(k)| = (2 pi)^2 * r * |{|phi| > thr}|.

    Returns (thresholded, full_slab) measures; the full slab is (2 pi)^2 * 2 r.
    """
    return TWO_PI ** 2 * r * support_fraction(threshold), TWO_PI ** 2 * 2 * r


def support_measure_grid(block: IntermittentBlock, grid: Grid3, threshold=SUPPORT_THRESHOLD):
    """Fine-grid indicator count of |phi_(k)| > threshold * max|phi_(k)|."""
    a = np.abs(block.phi)
    return float(np.count_nonzero(a > threshold * a.max()) * grid.cell_volume)


def product_support_oracle(r, r2=None, threshold=SUPPORT_THRESHOLD):
    """Slab-intersection measure of supp(phi_(k) phi_(k')) for independent k, k'."""
    r2 = r2 or r
    frac = support_fraction(threshold)
    return TWO_PI ** 3 * (r * frac / TWO_PI) * (r2 * frac / TWO_PI)


def product_support_2d(profile, r, r2=None, n_fine=4096, threshold=SUPPORT_THRESHOLD):
    """Indicator count of the product support on a fine grid of T^2."""
    r2 = r2 or r
    y = -np.pi + TWO_PI * np.arange(n_fine) / n_fine
    a = np.abs(profile.phi_r(y, r))
    b = np.abs(profile.phi_r(y, r2))
    prod = a[:, None] * b[None, :]
    count = np.count_nonzero(prod > threshold * prod.max())
    return float(TWO_PI ** 3 * count / n_fine ** 2)


def product_support_grid(block, block2, grid: Grid3, threshold=SUPPORT_THRESHOLD):
    prod = np.abs(block.phi * block2.phi)
    return float(np.count_nonzero(prod > threshold * prod.max()) * grid.cell_volume)


def fit_slopes(xs, ys):
    """Least-squares slopes of log y against the columns of log xs."""
    X = np.column_stack([np.ones(len(ys))] + [np.log(np.asarray(x, dtype=float)) for x in xs])
    coef, *_ = np.linalg.lstsq(X, np.log(np.asarray(ys, dtype=float)), rcond=None)
    return coef[1:]


def scaling_sweep(kappas=(1, 2, 4), rs=tuple(2.0 ** -j for j in range(3, 9)), ps=(1, 2, 4, np.inf),
                  Ms=(0, 1, 2), frame_index=0, grid: Grid3 | None = None, lattice="minimal"):
    """Dyadic (lambda, r) sweep of block norms and supports.

    lambda = kappa / r. Returns a list of row dicts with the CSV columns
    k-index, lambda, r, p, M, norm, oracle_norm, support, analytic_support.
    ``norm`` and ``support`` are 3D grid evaluations when ``grid`` resolves
    the block, NaN otherwise.
    """
    prof = make_profile()
    frame = geometry.all_frames()[frame_index]
    N = geometry.frame_multiplier(frame, lattice)
    rows = []
    for kappa in kappas:
        for r in rs:
            lam = kappa / r
            block = None
            if grid is not None:
                try:
                    block = sample_block(prof, frame, lam, r, grid, lattice=lattice)
                except ValueError:
                    block = None
            sup_an, _ = support_measure_1d(r)
            sup = support_measure_grid(block, grid) if block is not None else float("nan")
            for p in ps:
                for M in Ms:
                    oracle = norm_oracle_1d(prof, lam, r, p, M, multiplier=N)
                    measured = float("nan")
                    if block is not None:
                        ph = _phase(grid, block.ivec, block.kappa)
                        vals = (block.kappa * N) ** M * prof.phi_r(ph, r, M)
                        measured = spectral.lp_norm(vals, p, grid)
                    rows.append({"k-index": frame_index, "lambda": lam, "r": r, "p": p, "M": M,
                                 "norm": measured, "oracle_norm": oracle,
                                 "support": sup, "analytic_support": sup_an})
    return rows


def norm_slopes(kappas=(1, 2, 4, 8), rs=tuple(2.0 ** -j for j in range(2, 7)), ps=(1, 2, 4, np.inf),
                 Ms=(0, 1, 2), multiplier=1):
    """Fitted exponents of ||grad^M phi_(k)||_{L^p} in (lambda, r) from the 1D oracle.

    lambda = kappa / r ranges over a dyadic grid with kappa and r varied
    independently. Returns {(p, M): (slope_lambda, slope_r)}; the expected
    values are M and 1/p - 1/2.
    """
    prof = make_profile()
    out = {}
    for p in ps:
        for M in Ms:
            lams, rr, vals = [], [], []
            for kappa in kappas:
                for r in rs:
                    lams.append(kappa / r)
                    rr.append(r)
                    vals.append(norm_oracle_1d(prof, kappa / r, r, p, M, multiplier))
            sl = fit_slopes([lams, rr], vals)
            out[(p, M)] = (float(sl[0]), float(sl[1]))
    return out


def product_support_exponent(rs=tuple(2.0 ** -j for j in range(2, 7)), n_fine=4096):
    """Fitted exponent of the product-support measure in r (2D indicator count)."""
    prof = make_profile()
    meas = [product_support_2d(prof, r, n_fine=n_fine) for r in rs]
    return float(fit_slopes([rs], meas)[0]), meas


SWEEP_COLUMNS = ["k-index", "lambda", "r", "p", "M", "norm", "oracle_norm", "support", "analytic_support"]


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in SWEEP_COLUMNS])
