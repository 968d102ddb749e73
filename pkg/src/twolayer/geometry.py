"""Flattening geometry: extensions of the surface functions into the slab
and the coefficient fields built from them.

The vertical profiles of the extensions are evaluated in closed form per
horizontal mode, so theta, its vertical derivative and J are exact on any
set of vertical points; only the horizontal transforms are discrete.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateJacobian, DomainError
from .fields import (SURF_AXES, VolumeField, SurfaceField, dealiased, grad_h,
                     lap_h, multipliers, irfft, rfft)


# ---------------------------------------------------------------- Vandermonde


def default_lambdas(m=6):
    return np.arange(1, m + 2, dtype=float)


def vandermonde_matrix(lambdas):
    lam = np.asarray(lambdas, dtype=float)
    i = np.arange(len(lam))[:, None]
    return (-lam[None, :]) ** i


def vandermonde_coeffs(lambdas):
    """Weights alpha with sum_j alpha_j (-lambda_j)^i = 1 for i = 0..m.

    The system says sum_j alpha_j p(-lambda_j) = p(1) for every polynomial of
    degree <= m, so alpha_j is the j-th Lagrange basis polynomial on the nodes
    -lambda evaluated at 1.  That product form is used directly; it avoids the
    growth of the Vandermonde condition number in a dense solve.
    """
    lam = np.asarray(lambdas, dtype=float)
    if lam.ndim != 1 or lam.size < 2:
        raise DomainError("need at least two nodes (m >= 1)")
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise DomainError("nodes must be positive and finite")
    if np.any(np.diff(lam) <= 0):
        raise DomainError("nodes must be strictly increasing")
    with np.errstate(over="ignore"):
        cond = np.linalg.cond(vandermonde_matrix(lam))
    if not np.isfinite(cond) or cond > 1e15:
        raise DomainError(f"Vandermonde system is numerically singular (cond ~ {cond:.2e})")
    alpha = np.empty_like(lam)
    for j in range(lam.size):
        others = np.delete(lam, j)
        alpha[j] = np.prod((1.0 + others) / (others - lam[j]))
    return alpha


def vandermonde_residual(lambdas, alpha):
    """Row-scaled residual max_i |(V alpha)_i - 1| / sum_j |alpha_j| lambda_j^i."""
    V = vandermonde_matrix(lambdas)
    r = V @ alpha - 1.0
    scale = np.abs(V) @ np.abs(alpha)
    return float(np.max(np.abs(r) / scale))


# ---------------------------------------------------------------- bumps


def _smoothstep(s, k):
    # 10 s^3 - 15 s^4 + 6 s^5 and its derivatives in s
    if k == 0:
        return s**3 * (10 - 15 * s + 6 * s**2)
    if k == 1:
        return 30 * s**2 * (1 - s) ** 2
    if k == 2:
        return 60 * s - 180 * s**2 + 120 * s**3
    if k == 3:
        return 60 - 360 * s + 360 * s**2
    raise ValueError("derivative order up to 3")


@dataclass(frozen=True)
class QuinticBumps:
    """b1 rises 0 -> 1 across the upper layer and vanishes below; b2 is 1 at
    the interface and 0 at top and bottom.  First and second derivatives
    vanish at all three anchors."""
    ell: float
    b: float

    def b1(self, z, layer, k=0):
        z = np.asarray(z, dtype=float)
        if layer == "minus":
            return np.zeros_like(z)
        return _smoothstep(z / self.ell, k) / self.ell**k

    def b2(self, z, layer, k=0):
        z = np.asarray(z, dtype=float)
        if layer == "minus":
            return _smoothstep((z + self.b) / self.b, k) / self.b**k
        v = -_smoothstep(z / self.ell, k) / self.ell**k
        return 1.0 + v if k == 0 else v

    def anchor_residual(self):
        e = [self.b1(0.0, "plus"), self.b1(-self.b, "minus"), self.b1(self.ell, "plus") - 1,
             self.b2(self.ell, "plus"), self.b2(-self.b, "minus"), self.b2(0.0, "plus") - 1,
             self.b2(0.0, "minus") - 1]
        return float(np.max(np.abs(e)))


# ---------------------------------------------------------------- extensions


def _profile_upper(kmod, z, ell, k=0):
    z = np.asarray(z, dtype=float)
    return kmod[..., None] ** k * np.exp(kmod[..., None] * (z - ell))


def _profile_interface(kmod, z, layer, alpha, lambdas, k=0):
    z = np.asarray(z, dtype=float)
    km = kmod[..., None]
    if layer == "minus":
        return km**k * np.exp(km * z)
    out = np.zeros(kmod.shape + z.shape)
    for a, lam in zip(alpha, lambdas):
        out += a * (-lam * km) ** k * np.exp(-lam * km * z)
    return out


def _synth(F, prof, torus):
    # F: rfft coefficients (n1, n2r); prof: (n1, n2r, nz) -> (n1, n2, nz)
    return np.fft.irfft2(F[..., None] * prof, s=torus.shape, axes=(0, 1))


def poisson_extend_upper(eta_plus: SurfaceField, slab, z=None, layer=None, k=0):
    """Harmonic extension of the top surface function: mode xi times
    exp(|xi| (x3 - ell)).  Returns a VolumeField, or a layer array when an
    explicit set of points z (with its layer name) is supplied."""
    torus = eta_plus.spec
    _, _, _, kmod = multipliers(torus)
    F = rfft(eta_plus.values)
    if z is not None:
        return _synth(F, _profile_upper(kmod, z, slab.ell, k), torus)
    return VolumeField(torus, slab,
                       _synth(F, _profile_upper(kmod, slab.z_plus, slab.ell, k), torus),
                       _synth(F, _profile_upper(kmod, slab.z_minus, slab.ell, k), torus))


def poisson_extend_interface(eta_minus: SurfaceField, slab, lambdas=None, z=None, layer=None, k=0):
    """Extension of the interface function: exp(|xi| x3) below, and the
    Vandermonde combination sum_j alpha_j exp(-lambda_j |xi| x3) above, which
    matches the first m vertical derivatives at x3 = 0."""
    lam = default_lambdas() if lambdas is None else np.asarray(lambdas, dtype=float)
    alpha = vandermonde_coeffs(lam)
    torus = eta_minus.spec
    _, _, _, kmod = multipliers(torus)
    F = rfft(eta_minus.values)
    if z is not None:
        return _synth(F, _profile_interface(kmod, z, layer, alpha, lam, k), torus)
    return VolumeField(torus, slab,
                       _synth(F, _profile_interface(kmod, slab.z_plus, "plus", alpha, lam, k), torus),
                       _synth(F, _profile_interface(kmod, slab.z_minus, "minus", alpha, lam, k), torus))


class ThetaMap:
    """Linear map (eta_plus, eta_minus) -> theta and its first derivatives at
    arbitrary vertical points of a layer."""

    def __init__(self, torus, slab, bumps=None, lambdas=None):
        self.torus = torus
        self.slab = slab
        self.bumps = bumps or QuinticBumps(slab.ell, slab.b)
        self.lambdas = default_lambdas() if lambdas is None else np.asarray(lambdas, dtype=float)
        self.alpha = vandermonde_coeffs(self.lambdas)
        self._cache = {}

    def _profiles(self, z, layer):
        key = (layer, z.tobytes())
        if key not in self._cache:
            _, _, _, kmod = multipliers(self.torus)
            up = _profile_upper(kmod, z, self.slab.ell, 0) if layer == "plus" else None
            dup = _profile_upper(kmod, z, self.slab.ell, 1) if layer == "plus" else None
            it = _profile_interface(kmod, z, layer, self.alpha, self.lambdas, 0)
            dit = _profile_interface(kmod, z, layer, self.alpha, self.lambdas, 1)
            if len(self._cache) > 16:
                self._cache.clear()
            self._cache[key] = (up, dup, it, dit)
        return self._cache[key]

    def evaluate(self, eta_p, eta_m, z, layer, derivs=True):
        """theta (and A = d1 theta, B = d2 theta, d3 theta) on (n1, n2, len(z))."""
        z = np.asarray(z, dtype=float)
        up, dup, it, dit = self._profiles(z, layer)
        ik1, ik2, _, _ = multipliers(self.torus)
        b1 = self.bumps.b1(z, layer)
        b2 = self.bumps.b2(z, layer)
        Fm = rfft(eta_m)
        Em = _synth(Fm, it, self.torus)
        theta = b2 * Em
        if layer == "plus":
            Fp = rfft(eta_p)
            Ep = _synth(Fp, up, self.torus)
            theta = theta + b1 * Ep
        if not derivs:
            return theta
        d3 = self.bumps.b2(z, layer, 1) * Em + b2 * _synth(Fm, dit, self.torus)
        A = b2 * _synth(ik1 * Fm, it, self.torus)
        B = b2 * _synth(ik2 * Fm, it, self.torus)
        if layer == "plus":
            d3 = d3 + self.bumps.b1(z, layer, 1) * Ep + b1 * _synth(Fp, dup, self.torus)
            A = A + b1 * _synth(ik1 * Fp, up, self.torus)
            B = B + b1 * _synth(ik2 * Fp, up, self.torus)
        return theta, A, B, d3


# ---------------------------------------------------------------- geometry


def normal_vector(eta: SurfaceField):
    g1, g2 = grad_h(eta.values, eta.spec)
    return SurfaceField(eta.spec, np.stack([-g1, -g2, np.ones_like(g1)]), eta.side)


def mean_curvature(eta: SurfaceField):
    """div(grad eta / sqrt(1 + |grad eta|^2)), quotient formed on the padded grid."""
    spec = eta.spec
    g1, g2 = grad_h(eta.values, spec)

    def flux(a, b):
        s = 1.0 / np.sqrt(1.0 + a * a + b * b)
        return a * s, b * s

    f1, f2 = dealiased(flux, spec, g1, g2)
    ik1, ik2, _, _ = multipliers(spec)
    H = irfft(ik1 * rfft(f1) + ik2 * rfft(f2), spec)
    return SurfaceField(spec, H, eta.side)


def curvature_remainder(eta: SurfaceField):
    """div(((1 + |grad eta|^2)^{-1/2} - 1) grad eta) = H - lap eta."""
    return mean_curvature(eta).values - lap_h(eta.values, eta.spec)


def acal_matrix(A, B, K):
    """The 3x3 coefficient matrix with rows (1,0,-AK), (0,1,-BK), (0,0,K)."""
    one = np.ones_like(K)
    zero = np.zeros_like(K)
    return np.array([[one, zero, -A * K],
                     [zero, one, -B * K],
                     [zero, zero, K]])


@dataclass
class Geometry:
    torus: object
    slab: object
    eta_plus: SurfaceField
    eta_minus: SurfaceField
    thetamap: ThetaMap
    layers: dict = field(default_factory=dict)
    normal_plus: SurfaceField = None
    normal_minus: SurfaceField = None
    curvature_plus: SurfaceField = None
    curvature_minus: SurfaceField = None
    jacobian_floor: float = 0.1

    def _vf(self, name):
        return VolumeField(self.torus, self.slab, self.layers["plus"][name], self.layers["minus"][name])

    @property
    def theta(self):
        return self._vf("theta")

    @property
    def A(self):
        return self._vf("A")

    @property
    def B(self):
        return self._vf("B")

    @property
    def J(self):
        return self._vf("J")

    @property
    def K(self):
        return self._vf("K")

    @property
    def dtheta3(self):
        return self._vf("d3")

    def Acal(self, layer):
        L = self.layers[layer]
        return acal_matrix(L["A"], L["B"], L["K"])

    def at(self, z, layer):
        """Coefficient fields (theta, A, B, J, K) at arbitrary points of a layer."""
        theta, A, B, d3 = self.thetamap.evaluate(self.eta_plus.values, self.eta_minus.values, z, layer)
        J = 1.0 + d3
        return dict(theta=theta, A=A, B=B, d3=d3, J=J, K=1.0 / J)

    @property
    def min_J(self):
        return min(self.layers["plus"]["J"].min(), self.layers["minus"]["J"].min())

    @property
    def is_flat(self):
        return not (np.any(self.eta_plus.values) or np.any(self.eta_minus.values))


def build_geometry(eta_plus, eta_minus, slab, bumps=None, lambdas=None, jacobian_floor=0.1,
                   check=True, thetamap=None):
    torus = eta_plus.spec
    tm = thetamap or ThetaMap(torus, slab, bumps, lambdas)
    bumps = tm.bumps
    if bumps.anchor_residual() > 1e-12:
        raise DomainError("bump profiles violate their anchor values")
    g = Geometry(torus, slab, SurfaceField(torus, eta_plus.values, "plus"),
                 SurfaceField(torus, eta_minus.values, "minus"), tm, jacobian_floor=jacobian_floor)
    for layer in ("plus", "minus"):
        with np.errstate(divide="ignore"):
            g.layers[layer] = g.at(slab.z(layer), layer)
    g.normal_plus = normal_vector(g.eta_plus)
    g.normal_minus = normal_vector(g.eta_minus)
    g.curvature_plus = mean_curvature(g.eta_plus)
    g.curvature_minus = mean_curvature(g.eta_minus)
    if check and g.min_J <= jacobian_floor:
        raise DegenerateJacobian(f"min J = {g.min_J:.4g} is below the floor {jacobian_floor}",
                                 min_J=float(g.min_J))
    return g


def flat_geometry(torus, slab, **kw):
    z = SurfaceField.zeros(torus)
    return build_geometry(z, SurfaceField.zeros(torus, "minus"), slab, **kw)


def check_diffeomorphism(g: Geometry):
    """Smallness margins of the surfaces, each compared with 1/2."""
    Lp, Lm = g.layers["plus"], g.layers["minus"]

    def mx(name, shift=0.0):
        return float(max(np.max(np.abs(Lp[name] - shift)), np.max(np.abs(Lm[name] - shift))))

    e3 = np.array([0.0, 0.0, 1.0])[:, None, None]
    n_dev = max(np.max(np.abs(g.normal_plus.values - e3)), np.max(np.abs(g.normal_minus.values - e3)))
    k_dev = max(np.max(np.abs(Lp["K"][..., -1] - 1)), np.max(np.abs(Lp["K"][..., 0] - 1)),
                np.max(np.abs(Lm["K"][..., -1] - 1)), np.max(np.abs(Lm["K"][..., 0] - 1)))
    rep = dict(min_J=float(g.min_J), J_dev=mx("J", 1.0), A_max=mx("A"), B_max=mx("B"),
               N_dev=float(n_dev), K_dev=float(k_dev))
    rep["ok"] = bool(all(rep[k] <= 0.5 for k in ("J_dev", "A_max", "B_max", "N_dev", "K_dev"))
                     and rep["min_J"] > g.jacobian_floor)
    rep["advisory"] = "DegenerateJacobian" if rep["min_J"] <= g.jacobian_floor else None
    return rep


def theta_field(thetamap, eta_p, eta_m):
    """theta alone on the layer nodes (used for d/dt theta from surface velocities)."""
    slab = thetamap.slab
    return (thetamap.evaluate(eta_p, eta_m, slab.z_plus, "plus", derivs=False),
            thetamap.evaluate(eta_p, eta_m, slab.z_minus, "minus", derivs=False))
