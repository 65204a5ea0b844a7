"""Wavevector frames and the geometric decomposition weights.

Two finite sets of rational orthonormal frames (k, k1, k2): a skew set of five
frames whose 2-forms k1 ^ k2 decompose any small skew matrix with positive
weights, and a symmetric set of six frames whose dyads k1 (x) k1 decompose any
symmetric matrix near the identity. Weight functions return squared weights.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction as F
from functools import lru_cache
import math

import numpy as np

N_LAMBDA = 65
EPS_B = 1.0
MIN_WEIGHT = 1e-3


class OutOfBallError(ValueError):
    pass


@dataclass(frozen=True)
class WaveVectorFrame:
    k: tuple
    k1: tuple
    k2: tuple
    set_tag: str  # "B" or "u"

    def vec(self, name):
        return np.array([float(c) for c in getattr(self, name)])

    @property
    def denominator(self):
        """Smallest N with N*k integral."""
        return math.lcm(*(c.denominator for c in self.k))

    def lattice_vector(self, multiplier):
        """Integer vector multiplier * k."""
        out = []
        for c in self.k:
            v = c * multiplier
            if v.denominator != 1:
                raise ValueError(f"{multiplier} * k is not integral for k={self.k}")
            out.append(int(v))
        return tuple(out)


def _e(i):
    return tuple(F(int(j == i)) for j in range(3))


def _v(*c):
    return tuple(F(x) for x in c)


@lru_cache(maxsize=None)
def lambda_B():
    """The five skew frames."""
    e1, e2, e3 = _e(0), _e(1), _e(2)
    return (
        WaveVectorFrame(e1, e2, e3, "B"),
        WaveVectorFrame(e2, e3, e1, "B"),
        WaveVectorFrame(e3, e1, e2, "B"),
        WaveVectorFrame(_v(F(3, 5), F(4, 5), 0), _v(F(4, 5), F(-3, 5), 0), e3, "B"),
        WaveVectorFrame(_v(0, F(-4, 5), F(-3, 5)), _v(0, F(3, 5), F(-4, 5)), e1, "B"),
    )


@lru_cache(maxsize=None)
def lambda_u():
    """The six symmetric frames, from the explicit (k, k1, k2) table."""
    e1, e2, e3 = _e(0), _e(1), _e(2)
    a, b = F(12, 13), F(5, 13)
    frames = []
    for s in (1, -1):
        frames.append(WaveVectorFrame(_v(a, s * b, 0), _v(b, -s * a, 0), e3, "u"))
    for s in (1, -1):
        frames.append(WaveVectorFrame(_v(b, 0, s * a), _v(a, 0, -s * b), e2, "u"))
    for s in (1, -1):
        frames.append(WaveVectorFrame(_v(0, a, s * b), _v(0, b, -s * a), e1, "u"))
    return tuple(frames)


def lambda_u_prose_directions():
    """The six directions as listed in the set-builder description.

    These coincide with the k1 column of the table (up to sign), not with its
    k column; kept only for documentation output.
    """
    a, b = F(12, 13), F(5, 13)
    out = []
    for s in (1, -1):
        out.append(_v(b, s * a, 0))
    for s in (1, -1):
        out.append(_v(a, 0, s * b))
    for s in (1, -1):
        out.append(_v(0, b, s * a))
    return out


def all_frames():
    return lambda_B() + lambda_u()


def frame_multiplier(frame: WaveVectorFrame, lattice="uniform"):
    return N_LAMBDA if lattice == "uniform" else frame.denominator


# ---------------------------------------------------------------- skew weights

def skew_basis():
    """A1 = e2^e3, A2 = e3^e1, A3 = e1^e2 with u^v = u(x)v - v(x)u."""
    A = np.zeros((3, 3, 3))
    for m, (i, j) in enumerate(((1, 2), (2, 0), (0, 1))):
        A[m, i, j] = 1.0
        A[m, j, i] = -1.0
    return A


def frame_two_form(frame):
    k1, k2 = frame.vec("k1"), frame.vec("k2")
    return np.outer(k1, k2) - np.outer(k2, k1)


GAMMA_B_AT_ZERO = (F(7, 4), F(11, 3), F(1), F(35, 12), F(5, 3))


def skew_coordinates(A):
    """(c1, c2, c3) with A = c1 A1 + c2 A2 + c3 A3; works pointwise on (3,3,...) arrays."""
    return A[1, 2], A[2, 0], A[0, 1]


def frobenius(M):
    return np.sqrt(np.sum(np.asarray(M) ** 2, axis=(0, 1)))


def gamma_B(A, check=True):
    """Squared weights for a skew matrix A (3x3 or (3,3,...) field), |A| <= 1.

    Sum_k gamma_k^2 (k1 (x) k2 - k2 (x) k1) = A.
    """
    A = np.asarray(A, dtype=float)
    if check:
        nrm = frobenius(A)
        if np.any(nrm > EPS_B * (1 + 1e-12)):
            raise OutOfBallError(f"skew argument outside the unit ball: |A| = {float(np.max(nrm)):.6g}")
    c1, c2, c3 = skew_coordinates(A)
    base = [float(x) for x in GAMMA_B_AT_ZERO]
    one = np.ones_like(c1)
    return np.stack([base[0] + c1, base[1] + c2, base[2] + c3, base[3] * one, base[4] * one])


def reconstruct_skew(weights, frames=None):
    frames = frames or lambda_B()
    forms = np.stack([frame_two_form(f) for f in frames])
    return np.tensordot(forms, weights, axes=([0], [0]))


# ---------------------------------------------------------------- symmetric weights

_SYM_IDX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def sym_to_vec(S):
    """Orthonormal (Frobenius) coordinates of symmetric matrices; leading (3,3) axes."""
    r2 = math.sqrt(2.0)
    return np.stack([S[i, j] if i == j else r2 * S[i, j] for i, j in _SYM_IDX])


@lru_cache(maxsize=None)
def _sym_system():
    dyads = [np.outer(f.vec("k1"), f.vec("k1")) for f in lambda_u()]
    D = np.stack([sym_to_vec(d) for d in dyads], axis=1)
    if abs(np.linalg.det(D)) < 1e-8:
        raise RuntimeError("symmetric dyads do not span the symmetric matrices")
    Dinv = np.linalg.inv(D)
    return D, Dinv


def gamma_u_linear():
    """Matrix G with gamma_u^2(S) = G @ sym_to_vec(S)."""
    return _sym_system()[1]


@lru_cache(maxsize=None)
def eps_u(min_weight=MIN_WEIGHT):
    """Largest Frobenius radius about Id keeping every weight >= min_weight.

    The weights are affine in S, so the minimum of weight i over the sphere
    |S - Id| = rho is 1/2 - rho * ||row_i||; the radius is closed form.
    """
    G = gamma_u_linear()
    at_id = G @ sym_to_vec(np.eye(3))
    row_norms = np.linalg.norm(G, axis=1)
    return float(np.min((at_id - min_weight) / row_norms))


def gamma_u(S, check=True):
    """Squared weights for a symmetric S near Id: Sum_k gamma_k^2 k1 (x) k1 = S."""
    S = np.asarray(S, dtype=float)
    if check:
        eye = np.eye(3).reshape((3, 3) + (1,) * (S.ndim - 2))
        dist = frobenius(S - eye)
        if np.any(dist > eps_u() * (1 + 1e-12)):
            raise OutOfBallError(f"symmetric argument outside B(Id, eps_u): |S - Id| = {float(np.max(dist)):.6g}")
    return np.tensordot(gamma_u_linear(), sym_to_vec(S), axes=([1], [0]))


def reconstruct_sym(weights, frames=None):
    frames = frames or lambda_u()
    dyads = np.stack([np.outer(f.vec("k1"), f.vec("k1")) for f in frames])
    return np.tensordot(dyads, weights, axes=([0], [0]))


# ---------------------------------------------------------------- checks

def frame_orthonormality_defect(frame):
    M = np.stack([frame.vec("k"), frame.vec("k1"), frame.vec("k2")])
    return float(np.max(np.abs(M @ M.T - np.eye(3))))


def exact_orthonormal(frame):
    vs = (frame.k, frame.k1, frame.k2)
    for i in range(3):
        for j in range(3):
            d = sum(x * y for x, y in zip(vs[i], vs[j]))
            if d != (1 if i == j else 0):
                return False
    return True


def skew_identity_defect():
    """Frobenius size of Sum gamma_k^2(0) (k1 (x) k2 - k2 (x) k1), exact rationals."""
    total = [[F(0)] * 3 for _ in range(3)]
    for g, f in zip(GAMMA_B_AT_ZERO, lambda_B()):
        for i in range(3):
            for j in range(3):
                total[i][j] += g * (f.k1[i] * f.k2[j] - f.k2[i] * f.k1[j])
    return total


def sym_identity_exact():
    """Sum over the symmetric frames of (1/2) k1 (x) k1, exact rationals."""
    total = [[F(0)] * 3 for _ in range(3)]
    for f in lambda_u():
        for i in range(3):
            for j in range(3):
                total[i][j] += F(1, 2) * f.k1[i] * f.k1[j]
    return total


def m_star(samples=20000, seed=0):
    """Estimate of Sum_k ||gamma_k||_{C^1} over both admissible balls.

    C^1 = sup |gamma| + sup |d gamma|, with gamma = sqrt(gamma^2) and
    |d gamma| = |d gamma^2| / (2 gamma); sampled on random ball points plus
    the analytic gradient norms.
    """
    rng = np.random.default_rng(seed)
    # skew: gradient of gamma^2_i w.r.t. A in Frobenius is 1/sqrt(2) for i<3, 0 otherwise
    A = random_skew(rng, samples, radius=EPS_B)
    gB = gamma_B(A)
    grad_B = np.array([1 / math.sqrt(2)] * 3 + [0.0, 0.0])
    total_B = np.sum(np.sqrt(gB).max(axis=1) + grad_B / (2 * np.sqrt(gB.min(axis=1))))
    S = random_sym(rng, samples, radius=eps_u())
    gU = gamma_u(S)
    grad_U = np.linalg.norm(gamma_u_linear(), axis=1)
    total_U = np.sum(np.sqrt(gU).max(axis=1) + grad_U / (2 * np.sqrt(gU.min(axis=1))))
    return float(total_B + total_U)


def random_skew(rng, count, radius=1.0, exact_radius=False):
    """Random skew matrices, shape (3, 3, count), Frobenius norm <= radius."""
    c = rng.normal(size=(3, count))
    c /= np.linalg.norm(c, axis=0) * math.sqrt(2.0)
    scale = np.full(count, radius) if exact_radius else radius * rng.uniform(0, 1, count) ** (1 / 3)
    c *= scale
    return np.tensordot(skew_basis(), c, axes=([0], [0]))


def random_sym(rng, count, radius, exact_radius=False):
    """Random symmetric matrices Id + E with |E| <= radius, shape (3, 3, count)."""
    E = rng.normal(size=(3, 3, count))
    E = 0.5 * (E + E.transpose(1, 0, 2))
    E /= frobenius(E)
    scale = np.full(count, radius) if exact_radius else radius * rng.uniform(0, 1, count) ** (1 / 6)
    return np.eye(3)[:, :, None] + E * scale
