"""Coupled time stepping: forcing assembly, compatibility data, Picard loop.

One time step from t_n to t_{n+1} = t_n + dt iterates

    u^k    from the backward-Euler Lame step with density and forcing from
           iterate k-1 (geometry lagged, then refreshed once),
    eta^k  from the surface update with u linear in time across the step,
    q^k    from transport along characteristics over [t_n, t_{n+1}],

until successive iterates agree in the low-order contraction norms.
"""
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad

from .errors import (DegenerateJacobian, DensityOutOfRange, DomainError, PicardStall,
                     SmallnessViolation, UnsupportedOrder)
from .fields import (VOL_AXES, SurfaceField, VolumeField, dealiased, dx, dz, grad_h, quad_weights)
from .geometry import (ThetaMap, build_geometry, check_diffeomorphism, curvature_remainder,
                       mean_curvature, normal_vector, theta_field)
from .lame import GAUSS_T, LameOperator, LameParams, TractionData, check_density
from .norms import surface_norm_sq, volume_norm_sq
from .surface import (TimeExtension, advance_eta_kappa, build_xi_corrector, eta_time_derivative,
                      kinematic_rhs)
from .transport import (History, TransportCoefficients, build_transport_coefficients, grad_a,
                        mollified_reference_solve, solve_transport)

LAYERS = ("plus", "minus")
GL10 = np.polynomial.legendre.leggauss(10)
GL20 = np.polynomial.legendre.leggauss(20)


# ---------------------------------------------------------------- model


@dataclass
class Model:
    """Everything that stays fixed during a run."""
    torus: object
    slab: object
    eq: object                            # EquilibriumProfile
    lame: LameParams = field(default_factory=LameParams)
    sigma_plus: float = 0.0
    sigma_minus: float = 0.0
    kappa: float = 0.0
    use_kappa: bool = False
    cfl_max: float = 0.5
    rho_bounds: tuple = None              # (rho_lower / 2, 3 rho_upper / 2)
    jacobian_floor: float = 0.1
    delta: float = 1.0                    # bound on the surface smallness functional
    N: int = 1
    geometry_refreshes: int = 1
    transport_scheme: str = "characteristics"
    transport_eps: float = 0.1
    transport_clip: bool = True
    boundary_tol: float = 1e-8
    thetamap: ThetaMap = None
    xi: object = None                     # time extension used by the kappa problem

    def __post_init__(self):
        if self.thetamap is None:
            self.thetamap = ThetaMap(self.torus, self.slab)
        if self.rho_bounds is None:
            lo = min(float(np.min(self.eq(l, self.slab.z(l)))) for l in LAYERS)
            hi = max(float(np.max(self.eq(l, self.slab.z(l)))) for l in LAYERS)
            self.rho_bounds = (0.5 * lo, 1.5 * hi)
        self._bar = {}
        for l in LAYERS:
            z = self.slab.z(l)
            self._bar[l] = (self.eq(l, z), self.eq.d_rho_bar(l, z), self.eq.d2_rho_bar(l, z))

    @property
    def g(self):
        return self.eq.g

    @property
    def laws(self):
        return self.eq.laws

    @property
    def smallness_order(self):
        return 4 * self.N - 0.5

    def bar(self, layer):
        """(rho_bar, d3 rho_bar, d3^2 rho_bar) on the layer nodes."""
        return self._bar[layer]

    def geometry(self, eta, check=True):
        eta = np.asarray(eta, dtype=float)
        return build_geometry(SurfaceField(self.torus, eta[0], "plus"),
                              SurfaceField(self.torus, eta[1], "minus"),
                              self.slab, jacobian_floor=self.jacobian_floor, check=check,
                              thetamap=self.thetamap)

    def density(self, q: VolumeField, g):
        out = {}
        for l in LAYERS:
            rb, drb, _ = self.bar(l)
            out[l] = rb + q.layer(l) + drb * g.layers[l]["theta"]
        return VolumeField(self.torus, self.slab, out["plus"], out["minus"])

    @staticmethod
    def trace(u: VolumeField):
        """(2, 3, n1, n2): velocity on the top surface and on the interface."""
        return np.stack([u.plus[..., -1], u.plus[..., 0]])

    def eta_rate(self, eta, u, t=0.0):
        """Right side of the surface equation at (eta, u, t)."""
        if self.use_kappa:
            return eta_time_derivative(eta, self.trace(u), self.xi, self.kappa, t, self.torus)
        return kinematic_rhs(eta, self.trace(u), self.torus)

    def dtheta(self, eta_t):
        p, m = theta_field(self.thetamap, eta_t[0], eta_t[1])
        return VolumeField(self.torus, self.slab, p, m)

    def smallness(self, eta):
        return surface_norm_sq(eta, self.torus, self.smallness_order)


# ---------------------------------------------------------------- state


@dataclass
class State:
    u: VolumeField
    q: VolumeField
    eta: np.ndarray
    t: float = 0.0
    geometry: object = None
    rho: VolumeField = None
    coeffs: TransportCoefficients = None
    kinetic: float = None
    record: dict = None

    def fields(self):
        return self.u, self.q, self.eta


@dataclass
class DataChain:
    """Time derivatives at t = 0: u[j], q[j], eta[j] for j = 0..J_max."""
    u: list
    q: list
    eta: list

    @property
    def J_max(self):
        return len(self.u) - 1


# ---------------------------------------------------------------- forcing


def pressure_remainder(law, base, rho, rtol=1e-12):
    """int_base^rho (rho - z) P''(z) dz, pointwise.

    Substituting z = base + (rho - base) s gives (rho - base)^2 int_0^1 (1 - s) P''
    with no cancellation.  Ten-point Gauss-Legendre is compared with twenty
    points and any node where they disagree is redone by adaptive quadrature.
    """
    base = np.broadcast_to(np.asarray(base, dtype=float), np.shape(rho))
    rho = np.asarray(rho, dtype=float)
    if law.kind == "isothermal" or law.gamma == 1.0:
        return np.zeros_like(rho)
    if np.min(rho) <= 0 or np.min(base) <= 0 or not np.all(np.isfinite(rho)):
        raise DensityOutOfRange("non-positive density in the pressure remainder",
                                rho_min=float(np.min(rho)))
    d = rho - base

    def gl(rule):
        x, w = rule
        s = 0.5 * (x + 1.0)
        acc = np.zeros_like(rho)
        for si, wi in zip(s, w):
            acc += 0.5 * wi * (1.0 - si) * law.d2P(base + d * si)
        return d * d * acc

    r10, r20 = gl(GL10), gl(GL20)
    bad = np.abs(r10 - r20) > rtol * np.abs(r20) + 1e-300
    if np.any(bad):
        for idx in zip(*np.nonzero(bad)):
            a, b = float(base[idx]), float(rho[idx])
            r20[idx] = quad(lambda z: (b - z) * float(law.d2P(z)), a, b, epsabs=0.0, epsrel=rtol)[0]
    return r20


@dataclass
class Forcing:
    F1: VolumeField
    F2_plus: np.ndarray
    F2_minus: np.ndarray
    f: VolumeField
    R: VolumeField
    rho: VolumeField
    dtheta: VolumeField
    eta_t: np.ndarray
    coeffs: TransportCoefficients


def _layer_forcing(model, layer, L, uu, qq, dth):
    torus, z = model.torus, model.slab.z(layer)
    mul = lambda a, b: dealiased(np.multiply, torus, a, b, haxes=VOL_AXES)
    rb, drb, _ = model.bar(layer)
    theta = L["theta"]
    pert = qq + drb * theta
    rho = rb + pert
    R = pressure_remainder(model.laws[layer], rb, rho)
    Gu = [grad_a(uu[i], L, torus, z) for i in range(3)]
    d3u = dz(uu, z)
    Kd = mul(L["K"], dth)
    hq = model.eq.enthalpy_derivative(layer, rb) * qq
    Gh = grad_a(hq, L, torus, z)
    GR = grad_a(R, L, torus, z) if np.any(R) else (0.0, 0.0, 0.0)
    Gt = grad_a(theta, L, torus, z)
    F = []
    for i in range(3):
        adv = -mul(Kd, d3u[i]) + sum(mul(uu[j], Gu[i][j]) for j in range(3))
        F.append(-mul(rho, adv) - rb * Gh[i] - GR[i] - model.g * mul(pert, Gt[i]))
    return np.stack(F), R, rho


def surface_forcing(model, q: VolumeField, R: VolumeField, eta):
    """(F2_plus, F2_minus), each (3, n1, n2)."""
    torus, eq, g = model.torus, model.eq, model.g
    lp, lm = model.laws["plus"], model.laws["minus"]
    ep = SurfaceField(torus, eta[0], "plus")
    em = SurfaceField(torus, eta[1], "minus")
    Np, Nm = normal_vector(ep).values, normal_vector(em).values
    a = (-float(lp.dP(eq.rho1)) * q.plus[..., -1] + eq.rho1 * g * eta[0] - R.plus[..., -1]
         - model.sigma_plus * curvature_remainder(ep))
    jump_pq = float(lp.dP(eq.rho_plus0)) * q.plus[..., 0] - float(lm.dP(eq.rho_minus0)) * q.minus[..., -1]
    jump_r = R.plus[..., 0] - R.minus[..., -1]
    b = jump_pq - eq.jump * g * eta[1] + jump_r - model.sigma_minus * curvature_remainder(em)
    mul = lambda s, N: dealiased(np.multiply, torus, s, N)
    return mul(a, Np), mul(b, Nm)


def assemble_forcing(model, u, q, eta, g=None, eta_t=None, t=0.0, strict=None):
    """F1, F2 and f at (u, q, eta); d_t theta from the surface equation's right side."""
    g = model.geometry(eta) if g is None else g
    eta_t = model.eta_rate(eta, u, t) if eta_t is None else eta_t
    dth = model.dtheta(eta_t)
    F1, R, rho = {}, {}, {}
    for l in LAYERS:
        F1[l], R[l], rho[l] = _layer_forcing(model, l, g.layers[l], u.layer(l), q.layer(l), dth.layer(l))
    vf = lambda d: VolumeField(model.torus, model.slab, d["plus"], d["minus"])
    Rv = vf(R)
    F2p, F2m = surface_forcing(model, q, Rv, eta)
    strict = (not model.use_kappa) if strict is None else strict
    co = build_transport_coefficients(u, g, model.eq, dth, model.boundary_tol, strict=strict)
    return Forcing(vf(F1), F2p, F2m, co.f, Rv, vf(rho), dth, eta_t, co)


def transport_coefficients(model, u, eta, g=None, t=0.0, strict=None):
    g = model.geometry(eta) if g is None else g
    dth = model.dtheta(model.eta_rate(eta, u, t))
    strict = (not model.use_kappa) if strict is None else strict
    return build_transport_coefficients(u, g, model.eq, dth, model.boundary_tol, strict=strict)


# ---------------------------------------------------------------- boundary stress


def _stress_at(model, layer, L, uu, idx):
    """Full stress S_A u at one vertical node, (3, 3, n1, n2)."""
    torus, z = model.torus, model.slab.z(layer)
    mu, mup = model.lame.mu(layer), model.lame.mup(layer)
    d1 = dx(uu[..., idx], torus, 1)
    d2 = dx(uu[..., idx], torus, 2)
    d3 = dz(uu, z)[..., idx]
    A, B, K = L["A"][..., idx], L["B"][..., idx], L["K"][..., idx]
    M = np.stack([d1 - A * K * d3, d2 - B * K * d3, K * d3])
    tr = M[0, 0] + M[1, 1] + M[2, 2]
    S = mu * (M + M.swapaxes(0, 1))
    for i in range(3):
        S[i, i] = S[i, i] + (mup - 2.0 * mu / 3.0) * tr
    return S


def traction_residual(model, u, q, eta, g=None):
    """Dynamic boundary residuals at t = 0 on the top and the interface."""
    g = model.geometry(eta) if g is None else g
    eq, torus, grav = model.eq, model.torus, model.g
    lp, lm = model.laws["plus"], model.laws["minus"]
    rho = model.density(q, g)
    R = {l: pressure_remainder(model.laws[l], model.bar(l)[0], rho.layer(l)) for l in LAYERS}
    ep, em = SurfaceField(torus, eta[0], "plus"), SurfaceField(torus, eta[1], "minus")
    Np, Nm = normal_vector(ep).values, normal_vector(em).values
    Hp, Hm = mean_curvature(ep).values, mean_curvature(em).values
    Sp_top = _stress_at(model, "plus", g.layers["plus"], u.plus, -1)
    Sp_bot = _stress_at(model, "plus", g.layers["plus"], u.plus, 0)
    Sm_top = _stress_at(model, "minus", g.layers["minus"], u.minus, -1)
    SN = lambda S, N: np.einsum("ij...,j...->i...", S, N)
    top = (float(lp.dP(eq.rho1)) * q.plus[..., -1] * Np - SN(Sp_top, Np)
           - (eq.rho1 * grav * eta[0] - model.sigma_plus * Hp - R["plus"][..., -1]) * Np)
    jump_pq = float(lp.dP(eq.rho_plus0)) * q.plus[..., 0] - float(lm.dP(eq.rho_minus0)) * q.minus[..., -1]
    jump_r = R["plus"][..., 0] - R["minus"][..., -1]
    iface = (jump_pq * Nm - SN(Sp_bot - Sm_top, Nm)
             - (eq.jump * grav * eta[1] + model.sigma_minus * Hm - jump_r) * Nm)
    return top, iface


# ---------------------------------------------------------------- mass matrix


def _column_mass_bands(op: LameOperator):
    """Diagonal and off-diagonal of the consistent P1 mass per column."""
    col = op.col
    diag = np.zeros((*op.torus.shape, col.nc))
    off = np.zeros((*op.torus.shape, col.nc - 1))
    start = {"minus": 0, "plus": col.iface}
    for l in LAYERS:
        w = op.coefs.layers[l]["rhoJW"]
        w = w.reshape(*w.shape[:-1], -1, 2)                 # (n1, n2, nel, 2)
        s, ne = start[l], w.shape[-2]
        diag[..., s:s + ne] += w @ (1 - GAUSS_T) ** 2
        diag[..., s + 1:s + ne + 1] += w @ GAUSS_T**2
        off[..., s:s + ne] += w @ ((1 - GAUSS_T) * GAUSS_T)
    return diag, off


def _thomas(diag, off, rhs):
    """Batched symmetric tridiagonal solve along the last axis."""
    n = diag.shape[-1]
    c = np.zeros_like(off)
    d = np.zeros_like(rhs)
    beta = diag[..., 0].copy()
    d[..., 0] = rhs[..., 0] / beta
    for i in range(1, n):
        c[..., i - 1] = off[..., i - 1] / beta
        beta = diag[..., i] - off[..., i - 1] * c[..., i - 1]
        d[..., i] = (rhs[..., i] - off[..., i - 1] * d[..., i - 1]) / beta
    x = np.zeros_like(rhs)
    x[..., -1] = d[..., -1]
    for i in range(n - 2, -1, -1):
        x[..., i] = d[..., i] - c[..., i] * x[..., i + 1]
    return x


def mass_solve(op: LameOperator, r):
    """M^{-1} r on the free dofs (bottom row replaced by the identity)."""
    diag, off = _column_mass_bands(op)
    diag[..., 0] = 1.0
    off[..., 0] = 0.0
    r = r * op.free
    return _thomas(diag[None], off[None], r) * op.free


def mass_apply(op, x):
    return op.mass(x) * op.free


# ---------------------------------------------------------------- rates at t = 0


def _momentum_rhs(model, u, q, eta, eta_t):
    """(b - S u) on the column and the operator that owns the mass matrix."""
    g = model.geometry(eta)
    fo = assemble_forcing(model, u, q, eta, g=g, eta_t=eta_t, strict=False)
    op = LameOperator(g, fo.rho, None, model.lame)
    tr = TractionData(fo.F2_plus, fo.F2_minus, model.sigma_plus, model.sigma_minus, eta[0], eta[1])
    Fp, Fm = tr.effective(model.torus)
    b = op.volume_load(fo.F1) - op.surface_load(Fp, Fm) - op.stiffness(op.col.to_column(u))
    return b * op.free, op


def momentum_rate(model, u, q, eta, eta_t):
    b, op = _momentum_rhs(model, u, q, eta, eta_t)
    return op.col.to_field(mass_solve(op, b), model.torus)


def density_rate(model, u, q, eta, eta_t):
    """d_t q = f - v . grad q - c q."""
    g = model.geometry(eta)
    co = build_transport_coefficients(u, g, model.eq, model.dtheta(eta_t), strict=False)
    mul = lambda a, b: dealiased(np.multiply, model.torus, a, b, haxes=VOL_AXES)
    out = {}
    for l in LAYERS:
        qq, v, z = q.layer(l), co.v.layer(l), model.slab.z(l)
        grads = (dx(qq, model.torus, 1, VOL_AXES), dx(qq, model.torus, 2, VOL_AXES), dz(qq, z))
        out[l] = co.f.layer(l) - sum(mul(v[i], grads[i]) for i in range(3)) - mul(co.c.layer(l), qq)
    return VolumeField(model.torus, model.slab, out["plus"], out["minus"])


def _amax(x):
    if isinstance(x, VolumeField):
        return float(x.max_abs())
    return float(np.max(np.abs(x))) if np.size(x) else 0.0


def directional_derivative(fun, x, d, h=1e-2):
    """d/ds fun(x + s d) at s = 0 by the five-point centered difference."""
    scale = max(_amax(di) for di in d)
    if scale == 0.0:
        f0 = fun(*x)
        return f0 * 0.0
    s = h / scale
    at = lambda k: fun(*[xi + di * (k * s) for xi, di in zip(x, d)])
    fp2, fp1, fm1, fm2 = at(2), at(1), at(-1), at(-2)
    return ((fp1 - fm1) * 8.0 - (fp2 - fm2)) * (1.0 / (12.0 * s))


def compatibility_data(model, u0, q0, eta0, J_max=2):
    """Time derivatives at t = 0 by the recursion on the right sides.

    d_t eta = u . N, then M d_t u = b - S u and d_t q from the transport
    equation; the second derivatives differentiate those right sides along
    the already known first derivatives.
    """
    if not 0 <= J_max <= 2:
        raise UnsupportedOrder(f"compatibility chains are built up to J_max = 2, got {J_max}", J_max=J_max)
    eta0 = np.asarray(eta0, dtype=float)
    chain = DataChain([u0], [q0], [eta0])
    if J_max == 0:
        return chain
    # chain rates use the kinematic right side (the kappa terms cancel at t = 0)
    eta_t = kinematic_rhs(eta0, model.trace(u0), model.torus)
    u_t = momentum_rate(model, u0, q0, eta0, eta_t)
    q_t = density_rate(model, u0, q0, eta0, eta_t)
    chain.u.append(u_t)
    chain.q.append(q_t)
    chain.eta.append(eta_t)
    if J_max == 1:
        return chain
    spec = model.torus
    tr0, tr1 = model.trace(u0), model.trace(u_t)
    eta_tt = (kinematic_rhs(eta0, tr1, spec) + kinematic_rhs(eta_t, tr0, spec) - tr0[:, 2])

    def H(u, q, e, et):
        return _momentum_rhs(model, u, q, e, et)[0]

    dH = directional_derivative(H, (u0, q0, eta0, eta_t), (u_t, q_t, eta_t, eta_tt))
    _, op0 = _momentum_rhs(model, u0, q0, eta0, eta_t)
    xt = op0.col.to_column(u_t)

    def Mv(q, e):
        g = model.geometry(e)
        op = LameOperator(g, model.density(q, g), None, model.lame)
        return mass_apply(op, xt)

    dM = directional_derivative(Mv, (q0, eta0), (q_t, eta_t))
    u_tt = op0.col.to_field(mass_solve(op0, dH - dM), spec)
    q_tt = directional_derivative(lambda u, q, e, et: density_rate(model, u, q, e, et),
                                  (u0, q0, eta0, eta_t), (u_t, q_t, eta_t, eta_tt))
    chain.u.append(u_tt)
    chain.q.append(q_tt)
    chain.eta.append(eta_tt)
    return chain


def check_compatibility(chain: DataChain, model):
    """Max-norm residuals of the boundary conditions at t = 0 (and their first
    time derivative when the chain has it)."""
    u0, q0, e0 = chain.u[0], chain.q[0], chain.eta[0]
    rep = {}
    top, iface = traction_residual(model, u0, q0, e0)
    rep["traction_top_0"] = _amax(top)
    rep["traction_interface_0"] = _amax(iface)
    rep["jump_0"] = _amax(u0.plus[..., 0] - u0.minus[..., -1])
    rep["bottom_0"] = _amax(u0.minus[..., 0])
    if chain.J_max >= 1:
        u1, q1, e1 = chain.u[1], chain.q[1], chain.eta[1]

        def T(u, q, e):
            a, b = traction_residual(model, u, q, e)
            return np.stack([a, b])

        dT = directional_derivative(T, (u0, q0, e0), (u1, q1, e1))
        rep["traction_top_1"] = _amax(dT[0])
        rep["traction_interface_1"] = _amax(dT[1])
        rep["jump_1"] = _amax(u1.plus[..., 0] - u1.minus[..., -1])
        rep["bottom_1"] = _amax(u1.minus[..., 0])
    rep["max"] = max(rep.values())
    return rep


# ---------------------------------------------------------------- initial data


def project_velocity(u: VolumeField):
    """Enforce continuity at the interface and no-slip at the bottom."""
    plus, minus = u.plus.copy(), u.minus.copy()
    avg = 0.5 * (plus[..., 0] + minus[..., -1])
    plus[..., 0] = avg
    minus[..., -1] = avg
    minus[..., 0] = 0.0
    return u.like(plus, minus)


def prepare_initial_data(model, u0_raw, q0_raw, eta0):
    """Project the velocity onto the admissible set and attach geometry,
    density and the transport coefficients at t = 0.  q is left untouched."""
    eta0 = np.asarray(eta0, dtype=float)
    for name, v in (("u0", u0_raw), ("q0", q0_raw)):
        if not v.is_finite():
            raise DomainError(f"{name} has non-finite entries")
    if not np.all(np.isfinite(eta0)):
        raise DomainError("eta0 has non-finite entries")
    g = model.geometry(eta0)
    u0 = project_velocity(u0_raw)
    rho = model.density(q0_raw, g)
    st = State(u0, q0_raw, eta0, 0.0, g, rho)
    st.coeffs = transport_coefficients(model, u0, eta0, g, 0.0, strict=False)
    op = LameOperator(g, rho, None, model.lame)
    st.kinetic = op.kinetic(u0)
    top, iface = traction_residual(model, u0, q0_raw, eta0, g)
    st.record = dict(traction_residual=max(_amax(top), _amax(iface)),
                     projection_change=_amax(u0 - u0_raw))
    return st


def compatible_density(model, eta, iters=8):
    """q0 that balances the boundary tractions for a fluid at rest: linear in
    the upper layer between the interface and top values, zero below."""
    torus, eq, grav = model.torus, model.eq, model.g
    lp, lm = model.laws["plus"], model.laws["minus"]
    ep, em = SurfaceField(torus, eta[0], "plus"), SurfaceField(torus, eta[1], "minus")
    Hp, Hm = mean_curvature(ep).values, mean_curvature(em).values
    rb_p, drb_p, _ = model.bar("plus")
    rb_m, drb_m, _ = model.bar("minus")
    top = np.zeros(torus.shape)
    bot = np.zeros(torus.shape)
    Rm = pressure_remainder(lm, rb_m[-1], rb_m[-1] + drb_m[-1] * eta[1])
    for _ in range(iters):
        Rt = pressure_remainder(lp, rb_p[-1], rb_p[-1] + top + drb_p[-1] * eta[0])
        Rb = pressure_remainder(lp, rb_p[0], rb_p[0] + bot + drb_p[0] * eta[1])
        top = (eq.rho1 * grav * eta[0] - model.sigma_plus * Hp - Rt) / float(lp.dP(eq.rho1))
        bot = (eq.jump * grav * eta[1] + model.sigma_minus * Hm - (Rb - Rm)) / float(lp.dP(eq.rho_plus0))
    s = model.slab.z_plus / model.slab.ell
    plus = bot[..., None] * (1 - s) + top[..., None] * s
    return VolumeField(torus, model.slab, plus, np.zeros((*torus.shape, model.slab.nz_minus)))


def initial_fields(model, preset="small_data", amplitude=None):
    """(u0, q0, eta0) for a named preset."""
    torus, slab = model.torus, model.slab
    X1, X2 = torus.grid()
    zero_u = VolumeField.zeros(torus, slab, 1)
    if preset == "equilibrium":
        return zero_u, VolumeField.zeros(torus, slab), np.zeros((2, *torus.shape))
    if preset == "small_data":
        a = 1e-2 if amplitude is None else amplitude
        eta = np.stack([a * np.cos(X1 / torus.L1) * np.cos(X2 / torus.L2),
                        0.5 * a * np.cos(X1 / torus.L1)])
        return zero_u, compatible_density(model, eta), eta
    if preset == "huge_eta":
        a = 2.0 * slab.ell if amplitude is None else amplitude
        eta = np.stack([a * np.cos(X1 / torus.L1), np.zeros(torus.shape)])
        return zero_u, VolumeField.zeros(torus, slab), eta
    raise ValueError(f"unknown preset {preset!r}")


# ---------------------------------------------------------------- seed


def _volume_extension(spec, fields):
    per = {}
    for l in LAYERS:
        arrs = [np.moveaxis(f.layer(l), -1, -3) for f in fields]
        per[l] = TimeExtension(spec, arrs)
    return per


def seed_extension(chain: DataChain, model):
    """t -> (u, q, eta) with d_t^k at t = 0 equal to the chain entries."""
    spec = model.torus
    ue = _volume_extension(spec, chain.u)
    qe = _volume_extension(spec, chain.q)
    ee = TimeExtension(spec, chain.eta, first_order_zero=True)

    def vol(ext, t, k, like):
        p = np.moveaxis(np.asarray(ext["plus"](t, k)), -3, -1)
        m = np.moveaxis(np.asarray(ext["minus"](t, k)), -3, -1)
        return like.like(p, m)

    def seed(t, k=0):
        if t == 0 and k == 0:
            return chain.u[0].copy(), chain.q[0].copy(), np.array(chain.eta[0], copy=True)
        return (vol(ue, t, k, chain.u[0]), vol(qe, t, k, chain.q[0]), np.asarray(ee(t, k)))

    return seed


# ---------------------------------------------------------------- Picard


@dataclass
class Iterate:
    u: VolumeField
    q: VolumeField
    eta: np.ndarray
    geometry: object = None
    info: dict = None


def _difference(a: Iterate, b: Iterate):
    return a.u - b.u, a.q - b.q, a.eta - b.eta


def contraction_norms(levels, dt, model):
    """Low-order norms of an iterate difference.

    levels: list of (du, dq, deta) at equally spaced times ending at the
    current one; missing earlier levels count as zero (iterates share their
    past).  Returns W_inf, W_2 and the per-field terms.
    """
    torus = model.torus
    while len(levels) < 3:
        levels = [None] + list(levels)

    def part(i, k):
        v = levels[i]
        if v is None:
            z = levels[-1][k]
            return z * 0.0
        return v[k]

    def d1(k):
        return (part(2, k) - part(1, k)) * (1.0 / dt)

    def d2(k):
        return (part(2, k) - part(1, k) * 2.0 + part(0, k)) * (1.0 / dt**2)

    du, dq, de = part(2, 0), part(2, 1), part(2, 2)
    du_t, dq_t, de_t, de_tt = d1(0), d1(1), d1(2), d2(2)
    sig = np.array([model.sigma_plus, model.sigma_minus])[:, None, None]

    def grad_sq(f, s):
        g1, g2 = grad_h(f, torus)
        return sum(surface_norm_sq(np.sqrt(sig) * gi, torus, s) for gi in (g1, g2))

    out = {}
    out["u_inf"] = volume_norm_sq(du, 2) + volume_norm_sq(du_t, 0)
    out["u_2"] = volume_norm_sq(du, 3) + volume_norm_sq(du_t, 1)
    out["eta_inf"] = (surface_norm_sq(de, torus, 2.5) + surface_norm_sq(de_t, torus, 1.5)
                      + grad_sq(de, 2) + grad_sq(de_t, 0))
    out["eta_2"] = surface_norm_sq(sig * de, torus, 3.5) + surface_norm_sq(de_tt, torus, 0.5)
    out["q_inf"] = volume_norm_sq(dq, 2) + volume_norm_sq(dq_t, 1)
    out["W_inf"] = out["u_inf"] + out["eta_inf"] + out["q_inf"]
    out["W_2"] = out["u_2"] + out["eta_2"]
    return out


def _operator(model, g, rho, dt):
    """Lame operator sharing one flat preconditioner per step size; the
    preconditioner only needs to be spectrally close, not exact."""
    op = LameOperator(g, rho, dt, model.lame)
    cache = model.__dict__.setdefault("_pre_cache", {})
    if dt not in cache:
        if len(cache) > 4:
            cache.clear()
        cache[dt] = op.preconditioner()
    op._pre = cache[dt]
    return op


def _solve_velocity(model, g, rho, base, F1, F2p, F2m, eta, dt, x0=None):
    op = _operator(model, g, rho, dt)
    tr = TractionData(F2p, F2m, model.sigma_plus, model.sigma_minus, eta[0], eta[1])
    Fp, Fm = tr.effective(model.torus)
    b = op.volume_load(F1) - op.surface_load(Fp, Fm) + op.mass(op.col.to_column(base.u)) / dt
    x = op.solve(b, None if x0 is None else op.col.to_column(x0))
    return op.col.to_field(x, model.torus), op, b


def picard_step(model, prev: Iterate, base: State, dt):
    """One sweep: forcing from prev, Lame (lagged geometry, one refresh),
    surface update, transport."""
    t1 = base.t + dt
    g_prev = prev.geometry or model.geometry(prev.eta)
    fo = assemble_forcing(model, prev.u, prev.q, prev.eta, g=g_prev, t=t1)
    rho_prev = fo.rho
    check_density(rho_prev, model.rho_bounds)
    u, op, b = _solve_velocity(model, g_prev, rho_prev, base, fo.F1, fo.F2_plus, fo.F2_minus,
                               prev.eta, dt, prev.u)
    tr0, tr1 = model.trace(base.u), model.trace(u)
    kappa = model.kappa if model.use_kappa else 0.0
    xi = model.xi if model.use_kappa else None
    eta = advance_eta_kappa(base.eta, tr0, tr1, xi, kappa, dt, base.t, model.torus, model.cfl_max)
    g = model.geometry(eta)
    traction_eta = prev.eta
    for _ in range(model.geometry_refreshes):
        u, op, b = _solve_velocity(model, g, rho_prev, base, fo.F1, fo.F2_plus, fo.F2_minus, eta, dt, u)
        traction_eta = eta
    co1 = transport_coefficients(model, u, eta, g, t1)
    co0 = base.coeffs or transport_coefficients(model, base.u, base.eta, base.geometry, base.t)
    hist = History([base.t, t1], [co0, co1])
    if model.transport_scheme == "mollified":
        q = mollified_reference_solve(base.q, hist, model.transport_eps)
    else:
        q = solve_transport(base.q, hist, clip=model.transport_clip)
    info = dict(op=op, load=b, forcing=fo, coeffs=co1, traction_eta=traction_eta,
                cg=dict(op.last_info))
    if model.transport_scheme == "both":
        qm = mollified_reference_solve(base.q, hist, model.transport_eps)
        info["transport_gap"] = float(np.sqrt(volume_norm_sq(q - qm, 0)))
    return Iterate(u, q, eta, g, info)


def check_invariants(model, u, q, eta, g):
    """Raise on any corridor violation; return the measured margins."""
    rho = model.density(q, g)
    if not (u.is_finite() and q.is_finite() and np.all(np.isfinite(eta))):
        raise DensityOutOfRange("non-finite state")
    check_density(rho, model.rho_bounds)
    if g.min_J < model.jacobian_floor:
        raise DegenerateJacobian(f"min J = {g.min_J:.4g} below {model.jacobian_floor}", min_J=float(g.min_J))
    L = model.smallness(eta)
    if L > model.delta:
        raise SmallnessViolation(f"surface smallness {L:.4g} exceeds {model.delta:.4g}", L=L)
    lo = min(rho.plus.min(), rho.minus.min())
    hi = max(rho.plus.max(), rho.minus.max())
    return dict(rho_min=float(lo), rho_max=float(hi), min_J=float(g.min_J), L_eta=float(L)), rho


def advance_time_step(model, state: State, dt, max_picard=25, tol=1e-9, seed=None):
    """Iterate picard_step to convergence and commit the new state."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.coeffs is None:
        state = replace(state, coeffs=transport_coefficients(model, state.u, state.eta, state.geometry,
                                                             state.t))
    if seed is None:
        prev = Iterate(state.u, state.q, state.eta, state.geometry)
    else:
        su, sq, se = seed
        prev = Iterate(project_velocity(su), sq, np.asarray(se), None)
    norms, ratios = [], []
    converged = False
    for k in range(1, max_picard + 1):
        nxt = picard_step(model, prev, state, dt)
        w = contraction_norms([_difference(nxt, prev)], dt, model)
        norms.append(w)
        if len(norms) > 1:
            a = norms[-2]["W_inf"] + dt * norms[-2]["W_2"]
            b = w["W_inf"] + dt * w["W_2"]
            ratios.append(b / a if a > 0 else 0.0)
        prev = nxt
        if w["W_inf"] < tol:
            converged = True
            break
    if not converged:
        raise PicardStall(f"Picard iteration did not reach {tol:.1e} in {max_picard} sweeps "
                          f"(last W_inf = {norms[-1]['W_inf']:.3e})", t=state.t, dt=dt,
                          W_inf=norms[-1]["W_inf"])
    margins, rho = check_invariants(model, prev.u, prev.q, prev.eta, prev.geometry)
    info = prev.info
    op = info["op"]
    rec = dict(dt=dt, iterations=k, norms=norms, ratios=ratios, margins=margins, op=op,
               forcing=info["forcing"], traction_eta=info["traction_eta"], u_prev=state.u,
               eta_prev=state.eta, kinetic_prev=state.kinetic, kinetic_prev_new_mass=op.kinetic(state.u),
               xi=(np.asarray(model.xi(state.t + dt)) if (model.use_kappa and model.xi is not None) else None),
               cg=info["cg"], transport_gap=info.get("transport_gap"))
    return State(prev.u, prev.q, prev.eta, state.t + dt, prev.geometry, rho, info["coeffs"],
                 op.kinetic(prev.u), rec)


RETRYABLE = (PicardStall, DensityOutOfRange, DegenerateJacobian, SmallnessViolation)


def integrate(model, state, dt, t_end, max_picard=25, tol=1e-9, reject_retries=5, seed=None,
              on_commit=None, max_steps=None):
    """Step to t_end.  A failed step is retried with half the step size up to
    reject_retries times; the reduced size is kept afterwards."""
    rejections = []
    steps = 0
    eps = 1e-12 * max(1.0, abs(t_end))
    while state.t < t_end - eps:
        if max_steps is not None and steps >= max_steps:
            break
        h = min(dt, t_end - state.t)
        for attempt in range(reject_retries + 1):
            try:
                s0 = seed(state.t + h) if (seed is not None and steps == 0) else None
                new = advance_time_step(model, state, h, max_picard, tol, s0)
                break
            except RETRYABLE as exc:
                rejections.append(dict(step=steps, t=state.t, dt=h, error=exc.kind, message=str(exc)))
                last = exc
                h *= 0.5
        else:
            last.context.update(step=steps, t=state.t, rejections=len(rejections))
            last.state = state
            raise last
        dt = h if h < dt and (t_end - state.t) > h else dt
        state = new
        steps += 1
        if on_commit is not None:
            on_commit(steps, state)
    return state, rejections


def build_model_state(model, preset="small_data", amplitude=None, J_max=2):
    """Prepared initial state, its chain, and (for the kappa problem) the
    corrector installed on the model."""
    u0, q0, eta0 = initial_fields(model, preset, amplitude)
    state = prepare_initial_data(model, u0, q0, eta0)
    chain = compatibility_data(model, state.u, state.q, state.eta, J_max)
    if model.use_kappa:
        model.xi = build_xi_corrector(model.torus, chain.eta, jmax=chain.J_max)
    return state, chain
