"""Discrete Sobolev norms on surfaces and on the two-layer slab."""
import numpy as np

from .errors import UnsupportedOrder
from .fields import VolumeField, coeffs, dz, full_modulus, quad_weights, SurfaceField

S_MAX_VOLUME = 5


def surface_norm_sq(f, spec, s):
    """sum_xi <xi>^{2s} |f_hat|^2, summed over any leading axes."""
    if isinstance(f, SurfaceField):
        f = f.values
    br = full_modulus(spec)[3]
    c = coeffs(np.asarray(f, dtype=float), spec)
    return float(np.sum(br ** (2.0 * s) * np.abs(c) ** 2))


def surface_norm(f, spec, s):
    return float(np.sqrt(surface_norm_sq(f, spec, s)))


def _horizontal_weight(spec, k):
    """sum_{a1 + a2 <= k} xi1^{2 a1} xi2^{2 a2} on the fft2 layout."""
    K1, K2, _, _ = full_modulus(spec)
    w = np.zeros_like(K1)
    for a1 in range(k + 1):
        for a2 in range(k + 1 - a1):
            w += K1 ** (2 * a1) * K2 ** (2 * a2)
    return w


def _layer_hk_sq(f, z, spec, k, extra_h=0):
    # f: (..., n1, n2, nz); extra_h adds horizontal derivative orders on top of k
    wq = quad_weights(z)
    total = 0.0
    g = np.asarray(f, dtype=float)
    for m in range(k + 1):
        if m:
            g = dz(g, z)
        c = coeffs(np.moveaxis(g, -1, -3), spec)           # (..., nz, n1, n2)
        hw = _horizontal_weight(spec, k - m + extra_h)
        per_z = np.sum(hw * np.abs(c) ** 2, axis=(-2, -1))  # (..., nz)
        total += float(np.sum(per_z @ wq))
    return total


def volume_norm_sq(f: VolumeField, s, s_max=S_MAX_VOLUME):
    """Integer s: all mixed derivatives up to order s (spectral horizontally,
    4th-order differences vertically).  Half-integer s: ||f||_k ||f||_{k+1}."""
    if s < 0 or s > s_max:
        raise UnsupportedOrder(f"volume Sobolev order {s} outside [0, {s_max}]", s=s)
    k = int(np.floor(s))
    if abs(s - k) < 1e-12:
        return sum(_layer_hk_sq(f.layer(l), f.slab.z(l), f.torus, k) for l in ("plus", "minus"))
    if abs(s - k - 0.5) > 1e-12 or k + 1 > s_max:
        raise UnsupportedOrder(f"volume Sobolev order {s} must be an integer or half-integer", s=s)
    return float(np.sqrt(volume_norm_sq(f, k, s_max) * volume_norm_sq(f, k + 1, s_max)))


def volume_norm(f, s, s_max=S_MAX_VOLUME):
    return float(np.sqrt(volume_norm_sq(f, s, s_max)))


def ck_norm(f: VolumeField, k):
    """max over |alpha| <= k of sup |d^alpha f| on the grid."""
    from .fields import VOL_AXES, dx
    best = 0.0
    for layer in ("plus", "minus"):
        z = f.slab.z(layer)
        g3 = np.asarray(f.layer(layer), dtype=float)
        for m in range(k + 1):
            if m:
                g3 = dz(g3, z)
            for a1 in range(k - m + 1):
                for a2 in range(k - m - a1 + 1):
                    h = g3
                    for _ in range(a1):
                        h = dx(h, f.torus, 1, VOL_AXES)
                    for _ in range(a2):
                        h = dx(h, f.torus, 2, VOL_AXES)
                    best = max(best, float(np.max(np.abs(h))))
    return best
