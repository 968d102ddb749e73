"""Grids and field containers: periodic torus in (x1, x2), two vertical layers.

Horizontal directions are pseudo-spectral (real FFTs), vertical directions
use uniform per-layer grids with 4th-order finite differences.  The interface
node x3 = 0 appears in both layers.

Array conventions
-----------------
surface arrays:  (..., n1, n2)        horizontal axes (-2, -1)
layer arrays:    (..., n1, n2, nz)    horizontal axes (-3, -2), vertical -1
"""
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

SURF_AXES = (-2, -1)
VOL_AXES = (-3, -2)


@dataclass(frozen=True)
class TorusSpec:
    L1: float
    L2: float
    n1: int
    n2: int

    def __post_init__(self):
        if not (self.L1 > 0 and self.L2 > 0):
            raise ValueError("torus lengths must be positive")
        for n in (self.n1, self.n2):
            if n < 4 or n % 2:
                raise ValueError("horizontal mode counts must be even and >= 4")

    @property
    def shape(self):
        return (self.n1, self.n2)

    @property
    def area(self):
        return (2 * np.pi * self.L1) * (2 * np.pi * self.L2)

    @property
    def dA(self):
        return self.area / (self.n1 * self.n2)

    def grid(self):
        x1 = 2 * np.pi * self.L1 * np.arange(self.n1) / self.n1
        x2 = 2 * np.pi * self.L2 * np.arange(self.n2) / self.n2
        return np.meshgrid(x1, x2, indexing="ij")

    @property
    def fine(self):
        """The 3/2-padded torus used for dealiased products."""
        return TorusSpec(self.L1, self.L2, 3 * self.n1 // 2, 3 * self.n2 // 2)


@dataclass(frozen=True)
class SlabSpec:
    ell: float
    b: float
    nz_plus: int
    nz_minus: int

    def __post_init__(self):
        if not (self.ell > 0 and self.b > 0):
            raise ValueError("layer thicknesses must be positive")
        if min(self.nz_plus, self.nz_minus) < 6:
            raise ValueError("each layer needs at least 6 vertical nodes")

    @property
    def z_plus(self):
        return np.linspace(0.0, self.ell, self.nz_plus)

    @property
    def z_minus(self):
        return np.linspace(-self.b, 0.0, self.nz_minus)

    def z(self, layer):
        return self.z_plus if layer == "plus" else self.z_minus

    @property
    def volume_height(self):
        return self.ell + self.b


# ---------------------------------------------------------------- spectral


@lru_cache(maxsize=64)
def wavenumbers(spec: TorusSpec):
    """(k1 full, k2 half) for rfft2 layouts, plus Nyquist-free copies."""
    k1 = np.fft.fftfreq(spec.n1, d=1.0 / spec.n1) / spec.L1
    k2 = np.fft.rfftfreq(spec.n2, d=1.0 / spec.n2) / spec.L2
    k1d = k1.copy()
    k1d[spec.n1 // 2] = 0.0
    k2d = k2.copy()
    k2d[-1] = 0.0
    return k1, k2, k1d, k2d


def _bcast(a, axis_pos, haxes, extra):
    # place a 1-d multiplier on horizontal axis `axis_pos` of an rfft array
    shape = [1] * (2 + extra)
    shape[axis_pos] = a.size
    return a.reshape(shape)


def multipliers(spec, haxes=SURF_AXES):
    """Broadcastable (i k1, i k2, -|k|^2, |k|) for rfft2 arrays."""
    k1, k2, k1d, k2d = wavenumbers(spec)
    extra = 0 if haxes == SURF_AXES else 1
    K1 = _bcast(k1, 0, haxes, extra)
    K2 = _bcast(k2, 1, haxes, extra)
    ik1 = 1j * _bcast(k1d, 0, haxes, extra)
    ik2 = 1j * _bcast(k2d, 1, haxes, extra)
    ksq = K1**2 + K2**2
    return ik1, ik2, -ksq, np.sqrt(ksq)


def rfft(f, haxes=SURF_AXES):
    return np.fft.rfft2(f, axes=haxes)


def irfft(F, spec, haxes=SURF_AXES):
    return np.fft.irfft2(F, s=spec.shape, axes=haxes)


def dx(f, spec, direction, haxes=SURF_AXES):
    ik1, ik2, _, _ = multipliers(spec, haxes)
    m = ik1 if direction == 1 else ik2
    return irfft(m * rfft(f, haxes), spec, haxes)


def grad_h(f, spec, haxes=SURF_AXES):
    ik1, ik2, _, _ = multipliers(spec, haxes)
    F = rfft(f, haxes)
    return irfft(ik1 * F, spec, haxes), irfft(ik2 * F, spec, haxes)


def lap_h(f, spec, haxes=SURF_AXES):
    _, _, mlap, _ = multipliers(spec, haxes)
    return irfft(mlap * rfft(f, haxes), spec, haxes)


def pad(f, spec, haxes=SURF_AXES):
    """Spectral interpolation of grid values onto the 3/2-padded grid."""
    fs = spec.fine
    F = rfft(f, haxes)
    a1, a2 = haxes
    h1, h2 = spec.n1 // 2, spec.n2 // 2
    shape = list(F.shape)
    shape[a1] = fs.n1
    shape[a2] = fs.n2 // 2 + 1
    G = np.zeros(shape, dtype=complex)
    G[_sl(a1, 0, h1, a2, 0, h2, F.ndim)] = F[_sl(a1, 0, h1, a2, 0, h2, F.ndim)]
    G[_sl(a1, fs.n1 - h1 + 1, None, a2, 0, h2, F.ndim)] = \
        F[_sl(a1, spec.n1 - h1 + 1, None, a2, 0, h2, F.ndim)]
    return irfft(G, fs, haxes) * (fs.n1 * fs.n2) / (spec.n1 * spec.n2)


def truncate(g, spec, haxes=SURF_AXES):
    """Inverse of pad: keep the base-grid modes (Nyquist dropped)."""
    fs = spec.fine
    G = rfft(g, haxes)
    a1, a2 = haxes
    h1, h2 = spec.n1 // 2, spec.n2 // 2
    shape = list(G.shape)
    shape[a1] = spec.n1
    shape[a2] = spec.n2 // 2 + 1
    F = np.zeros(shape, dtype=complex)
    F[_sl(a1, 0, h1, a2, 0, h2, G.ndim)] = G[_sl(a1, 0, h1, a2, 0, h2, G.ndim)]
    F[_sl(a1, spec.n1 - h1 + 1, None, a2, 0, h2, G.ndim)] = \
        G[_sl(a1, fs.n1 - h1 + 1, None, a2, 0, h2, G.ndim)]
    return irfft(F, spec, haxes) * (spec.n1 * spec.n2) / (fs.n1 * fs.n2)


def _sl(a1, s1, e1, a2, s2, e2, ndim):
    idx = [slice(None)] * ndim
    idx[a1] = slice(s1, e1)
    idx[a2] = slice(s2, e2)
    return tuple(idx)


def dealiased(fn, spec, *arrays, haxes=SURF_AXES):
    """Evaluate a pointwise nonlinear expression with 3/2-rule padding."""
    padded = [pad(np.asarray(a, dtype=float), spec, haxes) for a in arrays]
    out = fn(*padded)
    if isinstance(out, tuple):
        return tuple(truncate(o, spec, haxes) for o in out)
    return truncate(out, spec, haxes)


def coeffs(values, spec):
    """Normalized Fourier coefficients, f_hat = int f e^{-i xi x} / (2 pi sqrt(L1 L2))."""
    scale = 2 * np.pi * np.sqrt(spec.L1 * spec.L2) / (spec.n1 * spec.n2)
    return np.fft.fft2(values, axes=SURF_AXES) * scale


def from_coeffs(c, spec):
    scale = 2 * np.pi * np.sqrt(spec.L1 * spec.L2) / (spec.n1 * spec.n2)
    return np.real(np.fft.ifft2(c / scale, axes=SURF_AXES))


def full_modulus(spec):
    """|xi| and <xi> on the full fft2 layout."""
    k1 = np.fft.fftfreq(spec.n1, d=1.0 / spec.n1) / spec.L1
    k2 = np.fft.fftfreq(spec.n2, d=1.0 / spec.n2) / spec.L2
    K1, K2 = np.meshgrid(k1, k2, indexing="ij")
    k = np.sqrt(K1**2 + K2**2)
    return K1, K2, k, np.sqrt(1 + k**2)


# ---------------------------------------------------------------- vertical


def fd_weights(nodes, x0, m):
    """Fornberg's recursion: weights for derivatives 0..m at x0."""
    n = len(nodes)
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c


@lru_cache(maxsize=64)
def _diff_matrix(z_key, order, accuracy):
    z = np.array(z_key)
    n = len(z)
    s_c = 2 * ((order + 1) // 2) + accuracy - 1
    s_b = order + accuracy
    D = np.zeros((n, n))
    for i in range(n):
        half = s_c // 2
        if i - half >= 0 and i + half < n:
            idx = np.arange(i - half, i + half + 1)
        else:
            s = min(s_b, n)
            lo = min(max(i - s // 2, 0), n - s)
            idx = np.arange(lo, lo + s)
        D[i, idx] = fd_weights(z[idx], z[i], order)[:, order]
    D.setflags(write=False)
    return D


def diff_matrix(z, order=1, accuracy=4):
    return _diff_matrix(tuple(np.asarray(z, dtype=float)), order, accuracy)


def dz(f, z, order=1):
    """Vertical derivative along the last axis."""
    return f @ diff_matrix(z, order).T


@lru_cache(maxsize=64)
def _quad_weights(n, h):
    w = np.ones(n)
    ends = np.array([3 / 8, 7 / 6, 23 / 24])
    w[:3] = ends
    w[-3:] = ends[::-1]
    w = w * h
    w.setflags(write=False)
    return w


def quad_weights(z):
    """End-corrected trapezoid weights (exact for cubics) on a uniform grid."""
    z = np.asarray(z)
    return _quad_weights(len(z), float(z[1] - z[0]))


# ---------------------------------------------------------------- containers


class SurfaceField:
    """Real field on one of the surfaces, kept as grid values."""

    def __init__(self, spec, values, side="plus"):
        values = np.asarray(values, dtype=float)
        if values.shape[-2:] != spec.shape:
            raise ValueError(f"surface field shape {values.shape} does not match {spec.shape}")
        if side not in ("plus", "minus"):
            raise ValueError("side must be 'plus' or 'minus'")
        self.spec = spec
        self.values = values
        self.side = side

    @classmethod
    def zeros(cls, spec, side="plus"):
        return cls(spec, np.zeros(spec.shape), side)

    @classmethod
    def from_coeffs(cls, spec, c, side="plus"):
        return cls(spec, from_coeffs(c, spec), side)

    @property
    def coeffs(self):
        return coeffs(self.values, self.spec)

    @property
    def rank(self):
        return 0 if self.values.ndim == 2 else 1

    def copy(self):
        return SurfaceField(self.spec, self.values.copy(), self.side)

    def __add__(self, other):
        o = other.values if isinstance(other, SurfaceField) else other
        return SurfaceField(self.spec, self.values + o, self.side)

    def __sub__(self, other):
        o = other.values if isinstance(other, SurfaceField) else other
        return SurfaceField(self.spec, self.values - o, self.side)

    def __mul__(self, s):
        return SurfaceField(self.spec, self.values * s, self.side)

    __rmul__ = __mul__

    def __neg__(self):
        return SurfaceField(self.spec, -self.values, self.side)

    def __repr__(self):
        return f"SurfaceField(side={self.side}, shape={self.values.shape})"


class VolumeField:
    """Scalar or 3-vector field on the two layers (interface node duplicated)."""

    def __init__(self, torus, slab, plus, minus):
        plus = np.asarray(plus, dtype=float)
        minus = np.asarray(minus, dtype=float)
        if plus.shape[-3:] != (*torus.shape, slab.nz_plus) or \
                minus.shape[-3:] != (*torus.shape, slab.nz_minus):
            raise ValueError("layer arrays do not match the grid")
        if plus.ndim not in (3, 4) or plus.ndim != minus.ndim:
            raise ValueError("volume fields are scalar or 3-vector")
        if plus.ndim == 4 and (plus.shape[0] != 3 or minus.shape[0] != 3):
            raise ValueError("vector fields carry exactly 3 components")
        self.torus = torus
        self.slab = slab
        self.plus = plus
        self.minus = minus

    @classmethod
    def zeros(cls, torus, slab, rank=0):
        lead = () if rank == 0 else (3,)
        return cls(torus, slab, np.zeros((*lead, *torus.shape, slab.nz_plus)),
                   np.zeros((*lead, *torus.shape, slab.nz_minus)))

    @property
    def rank(self):
        return 0 if self.plus.ndim == 3 else 1

    @property
    def layers(self):
        return (self.plus, self.minus)

    def layer(self, name):
        return self.plus if name == "plus" else self.minus

    def like(self, plus, minus):
        return VolumeField(self.torus, self.slab, plus, minus)

    def copy(self):
        return self.like(self.plus.copy(), self.minus.copy())

    def is_finite(self):
        return bool(np.all(np.isfinite(self.plus)) and np.all(np.isfinite(self.minus)))

    def _binop(self, other, op):
        if isinstance(other, VolumeField):
            return self.like(op(self.plus, other.plus), op(self.minus, other.minus))
        return self.like(op(self.plus, other), op(self.minus, other))

    def __add__(self, other):
        return self._binop(other, np.add)

    def __sub__(self, other):
        return self._binop(other, np.subtract)

    def __mul__(self, other):
        return self._binop(other, np.multiply)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.plus, -self.minus)

    def max_abs(self):
        return max(np.max(np.abs(self.plus)), np.max(np.abs(self.minus)))

    def __repr__(self):
        return f"VolumeField(rank={self.rank}, plus={self.plus.shape}, minus={self.minus.shape})"

