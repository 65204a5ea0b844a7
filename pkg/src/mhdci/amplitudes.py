"""Cutoff chi, normalizing fields rho and amplitude fields a_(k).

All matrix magnitudes are Frobenius norms, matching the geometry module.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry


class AmplitudeError(AssertionError):
    pass


def chi(z):
    """Smooth cutoff: 1 on [0, 1], z on [2, inf), quintic Hermite blend between.

    The blend 1 + 6s^3 - 8s^4 + 3s^5 (s = z - 1) matches value, first and
    second derivative at both ends and is nondecreasing.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("chi is defined for z >= 0 only")
    s = z - 1.0
    mid = 1.0 + s ** 3 * (6.0 - 8.0 * s + 3.0 * s ** 2)
    return np.where(z <= 1.0, 1.0, np.where(z >= 2.0, z, mid))


def chi_derivative(z, order=1):
    z = np.asarray(z, dtype=float)
    s = z - 1.0
    if order == 1:
        mid = 18.0 * s ** 2 - 32.0 * s ** 3 + 15.0 * s ** 4
        return np.where(z <= 1.0, 0.0, np.where(z >= 2.0, 1.0, mid))
    if order == 2:
        mid = 36.0 * s - 96.0 * s ** 2 + 60.0 * s ** 3
        return np.where(z <= 1.0, 0.0, np.where(z >= 2.0, 0.0, mid))
    raise ValueError("order must be 1 or 2")


@dataclass
class AmplitudeSet:
    rho: np.ndarray
    a: np.ndarray  # (frames, ...) amplitudes, a_k >= 0
    frames: tuple
    G: np.ndarray | None = None  # traceless compensator (magnetic set only)
    ratio_max: float = 0.0

    @property
    def a_sq(self):
        return self.a ** 2


def _check_weights(w, what):
    low = float(np.min(w))
    if low < 0:
        raise AmplitudeError(f"{what}: negative squared weight {low:.3g}")


def magnetic_amplitudes(R_B, delta_q1, c_B=1.0):
    """Amplitudes for the skew frames from the mollified magnetic stress R_B (3,3,...)."""
    eps = geometry.EPS_B
    mag = geometry.frobenius(R_B)
    rho = 2.0 * delta_q1 / eps * c_B * chi(mag / (c_B * delta_q1))
    if np.any(rho <= 0):
        raise AmplitudeError("rho_B must be positive")
    arg = -R_B / rho
    ratio = float(np.max(geometry.frobenius(arg)))
    if ratio > eps * (1 + 1e-12):
        raise AmplitudeError(f"|R_B / rho_B| = {ratio:.6g} exceeds eps_B")
    gam = geometry.gamma_B(arg, check=False)
    _check_weights(gam, "magnetic weights")
    a_sq = rho * gam
    frames = geometry.lambda_B()
    G = np.zeros(R_B.shape)
    for f, w in zip(frames, a_sq):
        k1, k2 = f.vec("k1"), f.vec("k2")
        dyad = np.outer(k1, k1) - np.outer(k2, k2)
        G += dyad.reshape((3, 3) + (1,) * (R_B.ndim - 2)) * w
    return AmplitudeSet(rho, np.sqrt(a_sq), frames, G, ratio)


def velocity_amplitudes(R_u, G_B, delta_q1, c_u=1.0):
    """Amplitudes for the symmetric frames from R_u + G_B."""
    eps = geometry.eps_u()
    S = R_u + G_B
    mag = geometry.frobenius(S)
    rho = 2.0 / eps * c_u * delta_q1 * chi(mag / (c_u * delta_q1))
    if np.any(rho <= 0):
        raise AmplitudeError("rho_u must be positive")
    ratio = float(np.max(mag / rho))
    if ratio > eps * (1 + 1e-12):
        raise AmplitudeError(f"|(R_u + G_B) / rho_u| = {ratio:.6g} exceeds eps_u")
    eye = np.eye(3).reshape((3, 3) + (1,) * (S.ndim - 2))
    gam = geometry.gamma_u(eye - S / rho, check=False)
    _check_weights(gam, "velocity weights")
    a_sq = rho * gam
    return AmplitudeSet(rho, np.sqrt(a_sq), geometry.lambda_u(), None, ratio)


def magnetic_cancellation_defect(amps: AmplitudeSet, R_B):
    """max |Sum a^2 (k1 (x) k2 - k2 (x) k1) + R_B| pointwise."""
    recon = geometry.reconstruct_skew(amps.a_sq, amps.frames)
    return float(np.max(np.abs(recon + R_B)))


def velocity_cancellation_defect(amps: AmplitudeSet, R_u, G_B):
    """max |Sum a^2 k1 (x) k1 - (rho Id - R_u - G_B)| pointwise."""
    recon = geometry.reconstruct_sym(amps.a_sq, amps.frames)
    eye = np.eye(3).reshape((3, 3) + (1,) * (R_u.ndim - 2))
    return float(np.max(np.abs(recon - (amps.rho * eye - R_u - G_B))))
