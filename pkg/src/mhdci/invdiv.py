"""Inverse divergence operators and the frequency-gain commutator check.

Both operators are Fourier multipliers acting on mean-free vector fields; the
tensor divergence contracts the second index, (div T)_i = d_j T_ij.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral
from .spectral import fft, ifft, waves

SOLENOIDAL_TOL = 1e-8


class NonSolenoidalError(ValueError):
    pass


class MeanError(ValueError):
    pass


def _mean_free_hat(v, report):
    g = spectral._same_grid(v)
    vh = fft(v)
    if report is not None:
        report["removed_mean"] = float(np.max(np.abs(spectral.spatial_mean(v))))
    vh[..., 0, 0, 0] = 0.0
    return g, vh


def _inv_lap_symbol(w):
    ksq = w.ksq.copy()
    ksq[0, 0, 0] = 1.0
    inv = -1.0 / ksq  # symbol of Delta^{-1}
    inv[0, 0, 0] = 0.0
    return inv


def inv_div_sym(v, report=None):
    """Symmetric trace-free R with div R = v for mean-free v.

    R_kl = d_k L v_l + d_l L v_k - 1/2 (delta_kl + d_k d_l L) div L v,
    with L = Delta^{-1}. The mean of v is projected out (reported).
    """
    g, vh = _mean_free_hat(v, report)
    w = waves(g)
    L = _inv_lap_symbol(w)
    d = w.dk()
    Lv = L * vh
    divLv = 1j * (d[0] * Lv[0] + d[1] * Lv[1] + d[2] * Lv[2])
    out = np.empty((3, 3) + g.shape)
    for k in range(3):
        for l in range(k, 3):
            h = 1j * d[k] * Lv[l] + 1j * d[l] * Lv[k] - 0.5 * (-d[k] * d[l] * L) * divLv
            if k == l:
                h = h - 0.5 * divLv
            out[k, l] = ifft(h, g)
            out[l, k] = out[k, l]
    return out


def inv_div_skew(f, report=None, tol=SOLENOIDAL_TOL):
    """Skew R^B with div R^B = f for mean-free divergence-free f.

    (R^B f)_ij = eps_ijk (-Delta)^{-1} (curl f)_k.
    """
    g = spectral._same_grid(f)
    div = spectral.divergence(f)
    dnorm = spectral.lp_norm(div, 2, g)
    fnorm = spectral.lp_norm(f, 2, g)
    if report is not None:
        report["divergence_l2"] = dnorm
    if dnorm > tol * max(fnorm, 1.0):
        raise NonSolenoidalError(f"skew inverse divergence needs div f = 0; measured ||div f||_L2 = {dnorm:.3e}")
    g, fh = _mean_free_hat(f, report)
    w = waves(g)
    L = -_inv_lap_symbol(w)  # (-Delta)^{-1}
    d1, d2, d3 = w.dk()
    c = (L * 1j * (d2 * fh[2] - d3 * fh[1]),
         L * 1j * (d3 * fh[0] - d1 * fh[2]),
         L * 1j * (d1 * fh[1] - d2 * fh[0]))
    out = np.zeros((3, 3) + g.shape)
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        val = ifft(c[k], g)
        out[i, j] = val
        out[j, i] = -val
    return out


def inv_grad_abs(f):
    """|grad|^{-1} f for mean-free f (zero mode set to zero)."""
    g = spectral._same_grid(f)
    w = waves(g)
    k = np.sqrt(w.ksq)
    k[0, 0, 0] = 1.0
    fh = fft(f) / k
    fh[..., 0, 0, 0] = 0.0
    return ifft(fh, g)


def divergence_defect(R, v):
    """Relative L^2 error of div R against the mean-free part of v."""
    diff = spectral.tensor_divergence(R) - spectral.project_nonzero(v)
    return spectral.lp_norm(diff, 2) / max(spectral.lp_norm(spectral.project_nonzero(v), 2), 1e-300)


@dataclass
class CommutatorReport:
    kappas: np.ndarray
    measured: np.ndarray
    bound: np.ndarray
    ratio: np.ndarray
    slope: float
    c_a: float
    p: float

    def rows(self):
        return [(int(k), float(m), float(b), float(r))
                for k, m, b, r in zip(self.kappas, self.measured, self.bound, self.ratio)]


def commutator_gain(a, f, kappa, p=2, mean_tol=1e-10):
    """(measured, bound) for || |grad|^{-1} (a P_{>=kappa} f) ||_{L^p}.

    The bound is C_a ||f||_{L^p} / kappa with C_a the C^1 surrogate of a.
    """
    g = spectral._same_grid(a, f)
    hf = spectral.project_highpass(f, kappa)
    prod = a * hf
    mean = float(spectral.spatial_mean(prod))
    scale = max(float(np.max(np.abs(prod))), 1e-300)
    if abs(mean) > mean_tol * scale:
        raise MeanError(f"a * P_(>=kappa) f has nonzero mean {mean:.3e}")
    measured = spectral.lp_norm(inv_grad_abs(prod), p, g)
    c_a = spectral.c1_surrogate(a)
    return measured, c_a * spectral.lp_norm(f, p, g) / kappa, c_a


def commutator_gain_check(a, f_of_kappa, kappas, p=2):
    """Sweep kappa with f = f_of_kappa(kappa); fit the decay slope in kappa."""
    kappas = np.asarray(kappas)
    meas, bnd = [], []
    c_a = 0.0
    for kap in kappas:
        m, b, c_a = commutator_gain(a, f_of_kappa(kap), kap, p)
        meas.append(m)
        bnd.append(b)
    meas, bnd = np.array(meas), np.array(bnd)
    slope = float(np.polyfit(np.log(kappas.astype(float)), np.log(meas), 1)[0]) if len(kappas) > 1 else float("nan")
    return CommutatorReport(kappas, meas, bnd, meas / bnd, slope, c_a, p)
