"""Transport of the density perturbation q along characteristics.

    d_t q + v . grad q + c q = f,   v = A^T u - K d_t theta e3,  c = div_A u

Primary solver: back-traced characteristics (RK4 per history interval, v
linear in time between snapshots, tricubic Lagrange interpolation in space)
with trapezoidal quadrature of the integrating factor along each path.
Reference solver: Eulerian method of lines on a vertically padded box with a
spectrally truncated horizontal advection term, SSP-RK3 in time.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryLeak, CFLViolation, EscapedDomain
from .fields import VOL_AXES, VolumeField, dealiased, dx, dz, multipliers, rfft, irfft
from .norms import ck_norm, volume_norm

try:                                   # optional compiled kernel for the tricubic gather
    import numba
except ImportError:                    # pragma: no cover
    numba = None

LAYERS = ("plus", "minus")


# ---------------------------------------------------------------- operators


def grad_a(phi, L, torus, z):
    """(grad_A phi)_i = Acal_ij d_j phi on one layer, products dealiased."""
    d1 = dx(phi, torus, 1, VOL_AXES)
    d2 = dx(phi, torus, 2, VOL_AXES)
    d3 = dz(phi, z)
    c1, c2, c3 = dealiased(lambda A, B, K, d: (A * K * d, B * K * d, K * d), torus,
                           L["A"], L["B"], L["K"], d3, haxes=VOL_AXES)
    return d1 - c1, d2 - c2, c3


def div_a(X, L, torus, z):
    """div_A X = Acal_ij d_j X_i."""
    d3 = dz(X, z)
    vert = dealiased(lambda A, B, K, a, b, c: K * (c - A * a - B * b), torus,
                     L["A"], L["B"], L["K"], d3[0], d3[1], d3[2], haxes=VOL_AXES)
    return dx(X[0], torus, 1, VOL_AXES) + dx(X[1], torus, 2, VOL_AXES) + vert


@dataclass
class TransportCoefficients:
    v: VolumeField
    c: VolumeField
    f: VolumeField
    leak: float = 0.0

    @property
    def is_static(self):
        return self.v.max_abs() == 0.0

    @classmethod
    def zeros(cls, torus, slab):
        return cls(VolumeField.zeros(torus, slab, 1), VolumeField.zeros(torus, slab), VolumeField.zeros(torus, slab))


def build_transport_coefficients(u: VolumeField, g, eq, dtheta_dt: VolumeField, boundary_tol=1e-8,
                                 strict=True):
    """v, c, f from the velocity, the geometry and d_t theta.

    The normal component of v is measured at every boundary node before it
    is projected to zero; with strict=True a value above boundary_tol raises.
    """
    torus, slab = u.torus, u.slab
    mul = lambda a, b: dealiased(np.multiply, torus, a, b, haxes=VOL_AXES)
    out = {"v": {}, "c": {}, "f": {}}
    leak = 0.0
    for layer in LAYERS:
        L = g.layers[layer]
        z = slab.z(layer)
        uu = u.layer(layer)
        dth = dtheta_dt.layer(layer)
        theta = L["theta"]
        rb = eq.rho[layer] if len(eq.rho[layer]) == len(z) else eq(layer, z)
        drb = eq.d_rho_bar(layer, z)
        d2rb = eq.d2_rho_bar(layer, z)
        AK = mul(L["A"], L["K"])
        BK = mul(L["B"], L["K"])
        v3 = -mul(AK, uu[0]) - mul(BK, uu[1]) + mul(L["K"], uu[2] - dth)
        v = np.stack([uu[0], uu[1], v3])
        ends = (0, -1)
        leak = max(leak, float(np.max(np.abs(v3[..., ends]))))
        v[2][..., 0] = 0.0
        v[2][..., -1] = 0.0
        c = div_a(uu, L, torus, z)
        Ktheta = mul(L["K"], mul(dth, theta))
        f = -div_a(rb * uu, L, torus, z) + d2rb * Ktheta \
            - div_a(drb * np.stack([mul(theta, uu[i]) for i in range(3)]), L, torus, z)
        out["v"][layer], out["c"][layer], out["f"][layer] = v, c, f
    if strict and leak > boundary_tol:
        raise BoundaryLeak(f"normal transport velocity {leak:.3e} at the boundary exceeds {boundary_tol:.1e}",
                           leak=leak)
    vf = lambda d: VolumeField(torus, slab, d["plus"], d["minus"])
    return TransportCoefficients(vf(out["v"]), vf(out["c"]), vf(out["f"]), leak)


# ---------------------------------------------------------------- interpolation


def _lagrange4(s):
    """Cubic Lagrange weights on nodes -1, 0, 1, 2 at offset s in [0, 1)."""
    return np.stack([-s * (s - 1) * (s - 2) / 6, (s + 1) * (s - 1) * (s - 2) / 2,
                     -(s + 1) * s * (s - 2) / 2, (s + 1) * s * (s - 1) / 6])


def _tricubic_kernel(F, x1, x2, x3, P1, P2, z0, hz, clip, out):
    C, n1, n2, nz = F.shape
    h1 = P1 / n1
    h2 = P2 / n2
    w1 = np.empty(4)
    w2 = np.empty(4)
    w3 = np.empty(4)
    for p in range(x1.size):
        s1 = (x1[p] % P1) / h1
        s2 = (x2[p] % P2) / h2
        i1 = int(np.floor(s1))
        i2 = int(np.floor(s2))
        s3 = (x3[p] - z0) / hz
        i3 = int(np.floor(s3)) - 1
        if i3 < 0:
            i3 = 0
        if i3 > nz - 4:
            i3 = nz - 4
        for w, t in ((w1, s1 - i1), (w2, s2 - i2), (w3, s3 - i3 - 1.0)):
            w[0] = -t * (t - 1) * (t - 2) / 6
            w[1] = (t + 1) * (t - 1) * (t - 2) / 2
            w[2] = -(t + 1) * t * (t - 2) / 2
            w[3] = (t + 1) * t * (t - 1) / 6
        for c in range(C):
            acc = 0.0
            lo = np.inf
            hi = -np.inf
            for a in range(4):
                ia = (i1 - 1 + a) % n1
                for b in range(4):
                    ib = (i2 - 1 + b) % n2
                    wab = w1[a] * w2[b]
                    for k in range(4):
                        v = F[c, ia, ib, i3 + k]
                        acc += wab * w3[k] * v
                        if clip:
                            lo = min(lo, v)
                            hi = max(hi, v)
            if clip:
                acc = min(max(acc, lo), hi)
            out[c, p] = acc


if numba is not None:
    _tricubic_kernel = numba.njit(cache=True, nogil=True)(_tricubic_kernel)


class LayerInterpolator:
    """Tricubic interpolation on one layer: periodic in x1, x2 and a shifted
    4-point stencil in x3 that stays inside the layer."""

    def __init__(self, torus, z, compiled=True):
        self.torus = torus
        self.z = np.asarray(z)
        self.hz = self.z[1] - self.z[0]
        self.P1 = 2 * np.pi * torus.L1
        self.P2 = 2 * np.pi * torus.L2
        self.compiled = compiled and numba is not None

    def stencil(self, x1, x2, x3):
        """Flat gather indices (64, P) and tensor weights (64, P)."""
        n1, n2, nz = self.torus.n1, self.torus.n2, len(self.z)
        h1, h2 = self.P1 / n1, self.P2 / n2
        s1 = np.mod(x1, self.P1) / h1
        s2 = np.mod(x2, self.P2) / h2
        i1 = np.floor(s1).astype(int)
        i2 = np.floor(s2).astype(int)
        w1 = _lagrange4(s1 - i1)
        w2 = _lagrange4(s2 - i2)
        I1 = np.mod(i1[None] + np.arange(-1, 3)[:, None], n1)
        I2 = np.mod(i2[None] + np.arange(-1, 3)[:, None], n2)
        s3 = (x3 - self.z[0]) / self.hz
        i3 = np.clip(np.floor(s3).astype(int) - 1, 0, nz - 4)
        w3 = _lagrange4(s3 - i3 - 1.0)                     # offset relative to node i3 + 1
        I3 = i3[None] + np.arange(4)[:, None]
        idx = ((I1[:, None, None] * n2 + I2[None, :, None]) * nz + I3[None, None, :]).reshape(64, -1)
        w = (w1[:, None, None] * w2[None, :, None] * w3[None, None, :]).reshape(64, -1)
        return idx, w

    def __call__(self, F, pts, st=None, clip=False):
        """F: (..., n1, n2, nz); pts: tuple of flat coordinate arrays."""
        if self.compiled:
            lead = F.shape[:-3]
            F4 = np.ascontiguousarray(F, dtype=float).reshape((-1,) + F.shape[-3:])
            x1, x2, x3 = (np.ascontiguousarray(a, dtype=float) for a in pts)
            out = np.empty((F4.shape[0], x1.size))
            _tricubic_kernel(F4, x1, x2, x3, self.P1, self.P2, float(self.z[0]), float(self.hz), clip, out)
            return out.reshape(lead + (x1.size,))
        idx, w = st if st is not None else self.stencil(*pts)
        lead = F.shape[:-3]
        vals = F.reshape(lead + (-1,))[..., idx]                     # (..., 64, P)
        out = np.einsum("...kp,kp->...p", vals, w)
        if clip:
            out = np.clip(out, vals.min(axis=-2), vals.max(axis=-2))
        return out


# ---------------------------------------------------------------- characteristics


@dataclass
class History:
    """Coefficient snapshots at increasing times (v linear in time between)."""
    times: list = field(default_factory=list)
    coeffs: list = field(default_factory=list)

    def append(self, t, co: TransportCoefficients):
        if self.times and t <= self.times[-1]:
            raise ValueError("history times must increase")
        self.times.append(float(t))
        self.coeffs.append(co)

    def window(self, k0):
        return History(self.times[k0:], self.coeffs[k0:])

    def __len__(self):
        return len(self.times)


def _grid_points(torus, z):
    X1, X2 = torus.grid()
    shape = (*torus.shape, len(z))
    return (np.broadcast_to(X1[..., None], shape).ravel().copy(),
            np.broadcast_to(X2[..., None], shape).ravel().copy(),
            np.broadcast_to(z, shape).ravel().copy())


def _clamp(x3, lo, hi, tol=1e-8):
    below = lo - x3
    above = x3 - hi
    worst = max(float(below.max(initial=0.0)), float(above.max(initial=0.0)))
    if worst > tol:
        raise EscapedDomain(f"characteristic left its layer by {worst:.3e}", excess=worst)
    return np.clip(x3, lo, hi)


def _trace_layer(history, layer, interp, pts):
    """Back-trace from the last history time to each earlier snapshot time.
    Returns the list of positions at t_0, ..., t_n (last = pts)."""
    n = len(history)
    pos = [None] * n
    pos[-1] = pts
    x1, x2, x3 = pts
    lo, hi = interp.z[0], interp.z[-1]
    for k in range(n - 1, 0, -1):
        va = history.coeffs[k - 1].v.layer(layer)
        vb = history.coeffs[k].v.layer(layer)
        if not np.any(va) and not np.any(vb):
            pos[k - 1] = (x1, x2, x3)
            continue
        h = history.times[k] - history.times[k - 1]

        same = va is vb or np.array_equal(va, vb)
        vab = va if same else np.concatenate([va, vb])

        def vel(p, s):          # s in [0, 1] from t_{k-1} to t_k
            ab = interp(vab, p)
            return ab if same else (1 - s) * ab[:3] + s * ab[3:]

        p0 = np.stack([x1, x2, x3])
        k1 = vel(tuple(p0), 1.0)
        p = p0 - 0.5 * h * k1
        p[2] = np.clip(p[2], lo, hi)
        k2 = vel(tuple(p), 0.5)
        p = p0 - 0.5 * h * k2
        p[2] = np.clip(p[2], lo, hi)
        k3 = vel(tuple(p), 0.5)
        p = p0 - h * k3
        p[2] = np.clip(p[2], lo, hi)
        k4 = vel(tuple(p), 0.0)
        p1 = p0 - h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        x1, x2 = p1[0], p1[1]
        x3 = _clamp(p1[2], lo, hi)
        pos[k - 1] = (x1, x2, x3)
    return pos


def trace_characteristics(history, x, layer, t_index=None, s_index=0):
    """Position at history time s_index of the characteristic through the
    points x = (x1, x2, x3) at history time t_index (default: last)."""
    t_index = len(history) - 1 if t_index is None else t_index
    h = History(history.times[s_index:t_index + 1], history.coeffs[s_index:t_index + 1])
    torus = h.coeffs[0].v.torus
    interp = LayerInterpolator(torus, h.coeffs[0].v.slab.z(layer))
    pts = tuple(np.atleast_1d(np.asarray(c, dtype=float)) for c in x)
    return _trace_layer(h, layer, interp, pts)[0]


def solve_transport(q0: VolumeField, history, clip=True):
    """q at the last history time from q0 at the first, along characteristics:
    q = q0(X_0) e^{-int c} + int f(X_s) e^{-int_s c} ds, trapezoid in time."""
    torus, slab = q0.torus, q0.slab
    out = {}
    n = len(history)
    for layer in LAYERS:
        z = slab.z(layer)
        interp = LayerInterpolator(torus, z)
        pts = _grid_points(torus, z)
        pos = _trace_layer(history, layer, interp, pts)
        cvals, fvals = [], []
        for k in range(n):
            co = history.coeffs[k]
            cl, fl = co.c.layer(layer), co.f.layer(layer)
            if k == n - 1:
                cvals.append(cl.ravel())
                fvals.append(fl.ravel())
                continue
            st = None if interp.compiled else interp.stencil(*pos[k])
            cvals.append(interp(cl, pos[k], st) if np.any(cl) else np.zeros(pts[0].size))
            fvals.append(interp(fl, pos[k], st) if np.any(fl) else np.zeros(pts[0].size))
        # I_k = int_{t_k}^{t_n} c along the path
        I = np.zeros((n, pts[0].size))
        for k in range(n - 2, -1, -1):
            h = history.times[k + 1] - history.times[k]
            I[k] = I[k + 1] + 0.5 * h * (cvals[k] + cvals[k + 1])
        q = interp(q0.layer(layer), pos[0], clip=clip) * np.exp(-I[0])
        for k in range(n - 1):
            h = history.times[k + 1] - history.times[k]
            q = q + 0.5 * h * (fvals[k] * np.exp(-I[k]) + fvals[k + 1] * np.exp(-I[k + 1]))
        out[layer] = q.reshape(*torus.shape, len(z))
    return VolumeField(torus, slab, out["plus"], out["minus"])


# ---------------------------------------------------------------- reference solver


def _upwind_dz(q, w, h):
    """First-order upwind w dq/dz on a uniform grid (one-sided at the ends)."""
    fwd = np.zeros_like(q)
    bwd = np.zeros_like(q)
    fwd[..., :-1] = (q[..., 1:] - q[..., :-1]) / h
    fwd[..., -1] = fwd[..., -2]
    bwd[..., 1:] = (q[..., 1:] - q[..., :-1]) / h
    bwd[..., 0] = bwd[..., 1]
    return np.where(w > 0, w * bwd, w * fwd)


def mollified_reference_solve(q0: VolumeField, history, eps, dt=None, cfl=0.5):
    """Eulerian reference: each layer is extended vertically by a pad of
    max(b, ell)/2 (coefficients and data continued by their end values),
    the horizontal advection term uses modes with |xi| <= 1/eps only, and
    time stepping is SSP-RK3 with v, c, f linear between snapshots."""
    torus, slab = q0.torus, q0.slab
    pad = max(slab.b, slab.ell) / 2
    _, _, _, kmod = multipliers(torus, VOL_AXES)
    ik1, ik2, _, _ = multipliers(torus, VOL_AXES)
    keep = (kmod <= 1.0 / eps + 1e-12)
    out = {}
    for layer in LAYERS:
        z = slab.z(layer)
        hz = z[1] - z[0]
        npad = int(np.ceil(pad / hz))
        sl = slice(npad, npad + len(z))
        ext = lambda a: np.concatenate([np.repeat(a[..., :1], npad, -1), a, np.repeat(a[..., -1:], npad, -1)], -1)
        q = ext(q0.layer(layer))
        coefs = [(ext(co.v.layer(layer)), ext(co.c.layer(layer)), ext(co.f.layer(layer))) for co in history.coeffs]

        def rhs(q, k, s):
            va, ca, fa = coefs[k]
            vb, cb, fb = coefs[min(k + 1, len(coefs) - 1)]
            v = (1 - s) * va + s * vb
            c = (1 - s) * ca + s * cb
            f = (1 - s) * fa + s * fb
            Q = rfft(q, VOL_AXES) * keep
            d1 = irfft(ik1 * Q, torus, VOL_AXES)
            d2 = irfft(ik2 * Q, torus, VOL_AXES)
            return f - c * q - v[0] * d1 - v[1] * d2 - _upwind_dz(q, v[2], hz)

        kmax = float(np.max(kmod * keep))
        for k in range(len(history) - 1):
            T = history.times[k + 1] - history.times[k]
            speed_h = max(np.abs(coefs[k][0][:2]).max(), np.abs(coefs[k + 1][0][:2]).max())
            speed_v = max(np.abs(coefs[k][0][2]).max(), np.abs(coefs[k + 1][0][2]).max())
            rate = speed_h * kmax + speed_v / hz + max(np.abs(coefs[k][1]).max(), np.abs(coefs[k + 1][1]).max())
            h = T if dt is None else min(dt, T)
            if rate > 0:
                h = min(h, cfl / rate) if dt is None else h
                if h * rate > 2.5:
                    raise CFLViolation(f"reference solver Courant number {h * rate:.3g} too large",
                                       courant=float(h * rate))
            m = int(np.ceil(T / h - 1e-12))
            h = T / m
            for i in range(m):
                s0, s1 = i / m, (i + 1) / m
                sh = 0.5 * (s0 + s1)
                q1 = q + h * rhs(q, k, s0)
                q2 = 0.75 * q + 0.25 * (q1 + h * rhs(q1, k, s1))
                q = q / 3 + 2 / 3 * (q2 + h * rhs(q2, k, sh))
        out[layer] = q[..., sl]
    return VolumeField(torus, slab, out["plus"], out["minus"])


# ---------------------------------------------------------------- Gronwall


def gronwall_bound_check(q_history, history, k=0, C_max=1e3):
    """Smallest C >= 0 with ||q(t)||_k <= e^{C g t} ||q0||_k + int e^{C g (t-s)} ||f||_k
    at every stored time, g = sup_t (||c||_{C^k} + ||v||_{C^k})."""
    times = np.asarray(history.times)
    qn = np.array([volume_norm(q, k) for q in q_history])
    fn = np.array([volume_norm(co.f, k) for co in history.coeffs])
    gam = max(ck_norm(co.c, k) + max(ck_norm(co.v.like(co.v.plus[i], co.v.minus[i]), k) for i in range(3))
              for co in history.coeffs)
    t0 = times[0]

    def holds(C):
        for n in range(len(times)):
            t = times[n] - t0
            bound = np.exp(C * gam * t) * qn[0]
            if n:
                s = times[: n + 1] - t0
                integrand = np.exp(C * gam * (t - s)) * fn[: n + 1]
                bound += np.trapezoid(integrand, s)
            if qn[n] > bound * (1 + 1e-9) + 1e-14:
                return False
        return True

    report = dict(k=k, gamma=float(gam), norms=qn.tolist())
    if holds(0.0):
        report.update(C=0.0, valid=True)
        return report
    if gam == 0 or not holds(C_max):
        report.update(C=float("inf"), valid=False)
        return report
    lo, hi = 0.0, C_max
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if holds(mid):
            hi = mid
        else:
            lo = mid
    report.update(C=float(hi), valid=True)
    return report


# ---------------------------------------------------------------- presets


def transport_preset(name, torus, slab, t_end=1.0, nsteps=20, U=0.5, c0=0.3):
    """Analytic coefficient histories for the cross-solver checks.
    Returns (q0, history, exact q at t_end or None)."""
    X1, X2 = torus.grid()
    times = np.linspace(0.0, t_end, nsteps + 1)

    def q_of(x1, x2, z, layer):
        base = 1.0 + 0.3 * np.sin(x1 / torus.L1) * np.cos(x2 / torus.L2)
        return base * (np.cos(z) if layer == "plus" else 1.0 + 0.2 * z)

    q0 = VolumeField(torus, slab, q_of(X1[..., None], X2[..., None], slab.z_plus, "plus"),
                     q_of(X1[..., None], X2[..., None], slab.z_minus, "minus"))
    hist = History()
    exact = None
    if name == "advection":
        v = VolumeField.zeros(torus, slab, 1)
        v.plus[0] = U
        v.minus[0] = U
        for t in times:
            hist.append(t, TransportCoefficients(v, VolumeField.zeros(torus, slab), VolumeField.zeros(torus, slab)))
        exact = VolumeField(torus, slab, q_of(X1[..., None] - U * t_end, X2[..., None], slab.z_plus, "plus"),
                            q_of(X1[..., None] - U * t_end, X2[..., None], slab.z_minus, "minus"))
    elif name == "decay":
        c = VolumeField.zeros(torus, slab) + c0
        for t in times:
            hist.append(t, TransportCoefficients(VolumeField.zeros(torus, slab, 1), c, VolumeField.zeros(torus, slab)))
        exact = q0 * np.exp(-c0 * t_end)
    elif name == "source":
        f = q0 * 0.5
        for t in times:
            hist.append(t, TransportCoefficients(VolumeField.zeros(torus, slab, 1), VolumeField.zeros(torus, slab), f))
        exact = q0 + f * t_end
    else:
        raise ValueError(f"unknown transport preset {name!r}")
    return q0, hist, exact
