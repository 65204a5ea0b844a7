"""Periodic grid, Fourier calculus, projections and mollifiers on [-pi, pi)^3.

Fields are plain numpy arrays whose last three axes are the spatial grid:
scalars ``(n, n, n)``, vectors ``(3, n, n, n)``, tensors ``(3, 3, n, n, n)``.
Time series carry a leading time axis.

Transform convention: forward transform unnormalized, inverse carries 1/n^3
(the numpy/scipy default). First derivatives annihilate every mode that has a
Nyquist component, so that all first-order operators map real fields to real
fields and compose exactly on the sub-Nyquist subspace.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi
AXES = (-3, -2, -1)


def _workers():
    val = os.environ.get("MHD_THREADS")
    if not val:
        return 1
    try:
        return max(1, int(val))
    except ValueError:
        return 1


class GridMismatchError(ValueError):
    pass


class PaddingError(ValueError):
    pass


@dataclass(frozen=True)
class Grid3:
    """Uniform periodic grid with nodes x_i = -pi + 2 pi i / n on every axis."""

    n: int

    def __post_init__(self):
        if self.n < 4 or self.n % 2:
            raise ValueError(f"grid size must be even and >= 4, got {self.n}")

    @property
    def spacing(self):
        return TWO_PI / self.n

    @property
    def cell_volume(self):
        return self.spacing ** 3

    @property
    def nodes(self):
        return -np.pi + self.spacing * np.arange(self.n)

    def coords(self):
        """Broadcastable coordinate arrays (x1, x2, x3)."""
        x = self.nodes
        return x[:, None, None], x[None, :, None], x[None, None, :]

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    def check(self, f):
        if f.shape[-3:] != self.shape:
            raise GridMismatchError(f"field shape {f.shape} does not match grid n={self.n}")


@dataclass(frozen=True)
class Wavenumbers:
    """Integer wavevectors of the real-to-complex transform of a Grid3."""

    k1: np.ndarray
    k2: np.ndarray
    k3: np.ndarray
    ksq: np.ndarray
    mask: np.ndarray  # False on modes with a Nyquist component

    def dk(self):
        """First-derivative symbols with Nyquist modes removed."""
        return (self.k1 * self.mask, self.k2 * self.mask, self.k3 * self.mask)


_WAVES: dict = {}


def waves(grid: Grid3) -> Wavenumbers:
    w = _WAVES.get(grid.n)
    if w is None:
        n = grid.n
        k = sfft.fftfreq(n, 1.0 / n)
        kr = sfft.rfftfreq(n, 1.0 / n)
        k1 = k[:, None, None]
        k2 = k[None, :, None]
        k3 = kr[None, None, :]
        ksq = k1 ** 2 + k2 ** 2 + k3 ** 2
        half = n // 2
        mask = (np.abs(k1) != half) & (np.abs(k2) != half) & (np.abs(k3) != half)
        w = Wavenumbers(k1, k2, k3, ksq, mask)
        _WAVES[grid.n] = w
    return w


def fft(f):
    return sfft.rfftn(f, axes=AXES, workers=_workers())


def ifft(fh, grid: Grid3):
    return sfft.irfftn(fh, s=grid.shape, axes=AXES, workers=_workers())


def _same_grid(*fields):
    n = fields[0].shape[-1]
    for f in fields[1:]:
        if f.shape[-3:] != fields[0].shape[-3:]:
            raise GridMismatchError("fields live on different grids")
    return Grid3(n)


# ---------------------------------------------------------------- calculus

def gradient(f):
    g = _same_grid(f)
    w = waves(g)
    fh = fft(f)
    return np.stack([ifft(1j * d * fh, g) for d in w.dk()])


def divergence(v):
    g = _same_grid(v)
    w = waves(g)
    vh = fft(v)
    d = w.dk()
    return ifft(1j * (d[0] * vh[0] + d[1] * vh[1] + d[2] * vh[2]), g)


def curl(v):
    g = _same_grid(v)
    w = waves(g)
    vh = fft(v)
    d1, d2, d3 = w.dk()
    return np.stack([
        ifft(1j * (d2 * vh[2] - d3 * vh[1]), g),
        ifft(1j * (d3 * vh[0] - d1 * vh[2]), g),
        ifft(1j * (d1 * vh[1] - d2 * vh[0]), g),
    ])


def tensor_divergence(T):
    """(div T)_i = d_j T_ij, contracting the second index."""
    g = _same_grid(T)
    w = waves(g)
    Th = fft(T)
    d1, d2, d3 = w.dk()
    return np.stack([ifft(1j * (d1 * Th[i, 0] + d2 * Th[i, 1] + d3 * Th[i, 2]), g) for i in range(3)])


def laplacian(f):
    g = _same_grid(f)
    return ifft(-waves(g).ksq * fft(f), g)


def spatial_mean(f):
    return f.mean(axis=AXES)


def inv_neg_laplacian(f, report=None):
    """Solve (-Delta) g = f for mean-free g; the mean of f is projected out.

    If ``report`` is a dict, the magnitude of the removed mean is stored under
    ``"removed_mean"``.
    """
    g = _same_grid(f)
    w = waves(g)
    fh = fft(f)
    if report is not None:
        report["removed_mean"] = float(np.max(np.abs(spatial_mean(f))))
    ksq = w.ksq.copy()
    ksq[0, 0, 0] = 1.0
    gh = fh / ksq
    gh[..., 0, 0, 0] = 0.0
    return ifft(gh, g)


def project_nonzero(f):
    mean = spatial_mean(f)
    return f - mean[..., None, None, None]


def project_highpass(f, kappa):
    """Zero every Fourier mode with |k| < kappa."""
    g = _same_grid(f)
    w = waves(g)
    fh = fft(f)
    fh = fh * (w.ksq >= kappa ** 2)
    return ifft(fh, g)


def leray_project(v):
    """Mean-free divergence-free part of v."""
    g = _same_grid(v)
    w = waves(g)
    vh = fft(v)
    ks = (w.k1, w.k2, w.k3)
    ksq = w.ksq.copy()
    ksq[0, 0, 0] = 1.0
    kdotv = (ks[0] * vh[0] + ks[1] * vh[1] + ks[2] * vh[2]) / ksq
    out = np.stack([vh[i] - ks[i] * kdotv for i in range(3)])
    out[..., 0, 0, 0] = 0.0
    return ifft(out, g)


def biot_savart(B):
    """Zero-mean divergence-free vector potential A = curl (-Delta)^{-1} B."""
    return curl(inv_neg_laplacian(B))


# ---------------------------------------------------------------- products

def outer(u, v):
    return u[:, None] * v[None, :]


def trace(T):
    return T[0, 0] + T[1, 1] + T[2, 2]


def traceless(T):
    out = T.copy()
    tr = trace(T) / 3.0
    for i in range(3):
        out[i, i] -= tr
    return out


def dot(u, v):
    return np.sum(u * v, axis=0)


def dealiased_product(f, g):
    """Pointwise product of f and g with 3/2-rule zero padding.

    Returns the exact product of the two trigonometric interpolants projected
    back onto the grid modes (Nyquist modes dropped).
    """
    grid = _same_grid(f, g)
    n = grid.n
    m = 3 * n // 2
    fb, gb = np.broadcast_arrays(f, g)
    lead = fb.shape[:-3]

    def pad(h):
        big = np.zeros(lead + (m, m, m // 2 + 1), dtype=complex)
        h2 = n // 2
        idx = [slice(0, h2), slice(m - h2 + 1, m)]
        src = [slice(0, h2), slice(n - h2 + 1, n)]
        for a, sa in zip(idx, src):
            for b, sb in zip(idx, src):
                big[..., a, b, :h2] = h[..., sa, sb, :h2]
        return big

    fp = sfft.irfftn(pad(fft(fb)), s=(m, m, m), axes=AXES, workers=_workers())
    gp = sfft.irfftn(pad(fft(gb)), s=(m, m, m), axes=AXES, workers=_workers())
    ph = sfft.rfftn(fp * gp, axes=AXES, workers=_workers())
    out = np.zeros(lead + (n, n, n // 2 + 1), dtype=complex)
    h2 = n // 2
    idx = [slice(0, h2), slice(m - h2 + 1, m)]
    src = [slice(0, h2), slice(n - h2 + 1, n)]
    for a, sa in zip(idx, src):
        for b, sb in zip(idx, src):
            out[..., sa, sb, :h2] = ph[..., a, b, :h2]
    return ifft(out, grid) * (m / n) ** 3


def product(f, g, strict=False):
    """Pointwise product, dealiased when ``strict`` is set."""
    if strict:
        return dealiased_product(f, g)
    return f * g


def outer_product(u, v, strict=False):
    if not strict:
        return outer(u, v)
    return dealiased_product(u[:, None], v[None, :])


# ---------------------------------------------------------------- norms

def lp_norm(f, p, grid: Grid3 | None = None):
    """L^p norm over the torus with pointwise Frobenius magnitude.

    Leading component axes are folded into the pointwise magnitude.
    """
    grid = grid or _same_grid(f)
    if f.ndim > 3:
        mag = np.sqrt(np.sum(f.reshape((-1,) + f.shape[-3:]) ** 2, axis=0))
    else:
        mag = np.abs(f)
    if p == np.inf:
        return float(mag.max())
    return float((np.sum(mag ** p) * grid.cell_volume) ** (1.0 / p))


def integrate(f, grid: Grid3 | None = None):
    grid = grid or _same_grid(f)
    return float(np.sum(f) * grid.cell_volume)


def c1_surrogate(f):
    """Grid max of |f| plus grid max of |grad f| (spatial part only)."""
    if f.ndim == 3:
        grad = gradient(f)
    else:
        comps = f.reshape((-1,) + f.shape[-3:])
        grad = np.concatenate([gradient(c) for c in comps])
    return lp_norm(f, np.inf) + lp_norm(grad, np.inf)


# ---------------------------------------------------------------- mollifiers

def bump(x):
    """Standard bump exp(-1/(1-x^2)) on (-1, 1), zero outside."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


def mollifier_multiplier_1d(n, ell):
    """Transform of the sampled, unit-mass 1D mollifier on an n-point periodic grid."""
    h = TWO_PI / n
    offsets = h * np.concatenate([np.arange(0, n // 2), np.arange(-n // 2, 0)])
    w = bump(offsets / ell) if ell > 0 else (offsets == 0).astype(float)
    if w.sum() == 0.0:
        w[0] = 1.0
    w = w / w.sum()
    return np.real(sfft.fft(w))


def mollify_space(f, ell):
    """Convolve with a tensorized bump of half-width ell and unit mass."""
    g = _same_grid(f)
    m = mollifier_multiplier_1d(g.n, ell)
    w = waves(g)
    n = g.n
    idx = np.arange(n)
    m1 = m[idx][:, None, None]
    m2 = m[idx][None, :, None]
    m3 = m[: n // 2 + 1][None, None, :]
    return ifft(fft(f) * (m1 * m2 * m3), g)


def time_mollifier_weights(dt, ell):
    """Discrete unit-mass temporal bump weights; returns (offsets, weights)."""
    if ell <= 0:
        return np.array([0]), np.array([1.0])
    h = int(np.floor(ell / dt))
    j = np.arange(-h, h + 1)
    w = bump(j * dt / ell)
    if w.sum() == 0.0:
        return np.array([0]), np.array([1.0])
    keep = w > 0
    j, w = j[keep], w[keep]
    return j, w / w.sum()


@dataclass
class TimeSeries:
    """Field samples on a uniform time grid; values has a leading time axis."""

    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def __len__(self):
        return len(self.times)


def mollify_time_array(values, dt, ell):
    """Direct discrete convolution over the time axis; returns (values, half_width)."""
    j, w = time_mollifier_weights(dt, ell)
    h = int(np.max(np.abs(j)))
    nt = values.shape[0]
    if nt - 2 * h < 1:
        raise PaddingError(
            f"time padding too small for mollifier width {ell:g}: need {2 * h + 1} slices, have {nt}")
    out = np.zeros((nt - 2 * h,) + values.shape[1:])
    for jj, ww in zip(j, w):
        out += ww * values[h + jj: nt - h + jj]
    return out, h


def mollify_time(s: TimeSeries, ell) -> TimeSeries:
    vals, h = mollify_time_array(s.values, s.dt, ell)
    times = s.times[h: len(s.times) - h]
    return TimeSeries(times, vals, dict(s.meta))


# ---------------------------------------------------------------- structure

def symmetric_traceless(T):
    """Symmetric trace-free part of T with the trace removed exactly.

    The (3,3) entry is set to -(T00 + T11) so that trace() of the result is
    exactly zero in floating point.
    """
    S = 0.5 * (T + np.swapaxes(T, 0, 1))
    tr = trace(S) / 3.0
    S[0, 0] -= tr
    S[1, 1] -= tr
    S[2, 2] = -(S[0, 0] + S[1, 1])
    return S


def skew_part(T):
    return 0.5 * (T - np.swapaxes(T, 0, 1))


def fd_second(values, dt):
    """Centered second-order time derivative on interior slices 1..nt-2."""
    return (values[2:] - values[:-2]) / (2.0 * dt)


def fd_fourth(values, dt):
    """Centered fourth-order time derivative on slices 2..nt-3."""
    return (values[:-4] - 8.0 * values[1:-3] + 8.0 * values[3:-1] - values[4:]) / (12.0 * dt)


def drop_nyquist(f):
    """Remove every Fourier mode with a Nyquist component (invisible to the masked derivatives)."""
    g = _same_grid(f)
    return ifft(fft(f) * waves(g).mask, g)


# ---------------------------------------------------------------- field dumps

FIELD_MAGIC = "MHDFIELD v1"
FIELD_KINDS = {"scalar": (), "vector": (3,), "tensor": (3, 3)}


class FieldFormatError(ValueError):
    pass


def field_kind(f):
    for kind, lead in FIELD_KINDS.items():
        if f.ndim == 3 + len(lead) and f.shape[:len(lead)] == lead:
            return kind
    raise FieldFormatError(f"cannot dump an array of shape {f.shape}")


def field_bytes(f, time=0.0):
    """Header line then little-endian float64, row-major nodes, components interleaved."""
    g = _same_grid(f)
    kind = field_kind(f)
    lead = len(FIELD_KINDS[kind])
    nodes_first = np.moveaxis(np.asarray(f, dtype=float), tuple(range(lead)), tuple(range(-lead, 0)))
    head = f"{FIELD_MAGIC} {kind} {g.n} {float(time)!r}\n".encode("ascii")
    return head + np.ascontiguousarray(nodes_first, dtype="<f8").tobytes()


def write_field(path, f, time=0.0):
    with open(path, "wb") as fh:
        fh.write(field_bytes(f, time))


def read_field(path):
    """(kind, time, array) from a field dump."""
    with open(path, "rb") as fh:
        head = fh.readline().decode("ascii").split()
        body = fh.read()
    if len(head) != 5 or " ".join(head[:2]) != FIELD_MAGIC or head[2] not in FIELD_KINDS:
        raise FieldFormatError(f"{path}: bad field header {' '.join(head)!r}")
    kind, n, time = head[2], int(head[3]), float(head[4])
    lead = FIELD_KINDS[kind]
    shape = (n, n, n) + lead
    data = np.frombuffer(body, dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise FieldFormatError(f"{path}: expected {int(np.prod(shape))} values, found {data.size}")
    arr = data.reshape(shape).astype(float)
    return kind, time, np.ascontiguousarray(np.moveaxis(arr, tuple(range(3, 3 + len(lead))),
                                                        tuple(range(len(lead)))))


def write_vtk(path, fields, title="mhdci"):
    """Legacy ASCII structured-points file with scalar and vector point data."""
    g = None
    lines = []
    for name, f in fields.items():
        g = g or _same_grid(f)
        kind = field_kind(f)
        if kind == "scalar":
            lines.append(f"SCALARS {name} double 1\nLOOKUP_TABLE default")
            vals = f.transpose(2, 1, 0).reshape(-1, 1)  # VTK runs x fastest
        elif kind == "vector":
            lines.append(f"VECTORS {name} double")
            vals = f.transpose(3, 2, 1, 0).reshape(-1, 3)
        else:
            raise FieldFormatError("VTK output supports scalar and vector fields only")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in vals)
    h = g.spacing
    head = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET STRUCTURED_POINTS",
            f"DIMENSIONS {g.n} {g.n} {g.n}", f"ORIGIN {-np.pi!r} {-np.pi!r} {-np.pi!r}",
            f"SPACING {h!r} {h!r} {h!r}", f"POINT_DATA {g.n ** 3}"]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(head + lines) + "\n")
