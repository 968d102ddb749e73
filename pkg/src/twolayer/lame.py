"""Two-phase Lame problem in flattened coordinates.

Discretization: Fourier pseudo-spectral in (x1, x2), continuous P1 elements
in x3 on the joined column (bottom ... interface ... top), with the interface
node shared so that velocity continuity holds by construction.  Each element
uses two-point Gauss quadrature and the geometry coefficients are evaluated
exactly at the Gauss points.

The operator is applied matrix-free.  Systems are solved by preconditioned
CG where the preconditioner is the flat-geometry operator, which is diagonal
in the horizontal Fourier modes and is inverted mode by mode.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.sparse.linalg import LinearOperator, cg

from .errors import DensityOutOfRange, DegenerateJacobian, SolveFailure, ZeroField
from .fields import VOL_AXES, VolumeField, dx, grad_h, lap_h, multipliers, rfft

GAUSS_T = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


@dataclass(frozen=True)
class LameParams:
    mu_plus: float = 0.5
    mu_minus: float = 0.5
    mup_plus: float = 0.1
    mup_minus: float = 0.1
    cg_tol: float = 1e-10
    cg_maxit: int = 500

    def __post_init__(self):
        if not (self.mu_plus > 0 and self.mu_minus > 0):
            raise ValueError("shear viscosities must be positive")
        if self.mup_plus < 0 or self.mup_minus < 0:
            raise ValueError("bulk viscosities must be non-negative")

    def mu(self, layer):
        return self.mu_plus if layer == "plus" else self.mu_minus

    def mup(self, layer):
        return self.mup_plus if layer == "plus" else self.mup_minus


class Column:
    """Vertical P1 bookkeeping for the two layers."""

    def __init__(self, slab):
        self.slab = slab
        self.nzm = slab.nz_minus
        self.nzp = slab.nz_plus
        self.nc = self.nzm + self.nzp - 1
        self.iface = self.nzm - 1
        self.top = self.nc - 1
        self.h = {}
        self.zg = {}
        for layer in ("plus", "minus"):
            z = slab.z(layer)
            h = np.diff(z)
            self.h[layer] = np.repeat(h, 2)
            self.zg[layer] = (z[:-1, None] + h[:, None] * GAUSS_T[None, :]).ravel()

    @property
    def z(self):
        return np.concatenate([self.slab.z_minus, self.slab.z_plus[1:]])

    def split(self, x):
        return {"minus": x[..., :self.nzm], "plus": x[..., self.nzm - 1:]}

    def gather(self, rm, rp):
        """Sum per-layer nodal contributions (transpose of split)."""
        out = np.zeros(rm.shape[:-1] + (self.nc,), dtype=np.result_type(rm, rp))
        out[..., :self.nzm] += rm
        out[..., self.nzm - 1:] += rp
        return out

    def to_column(self, vf: VolumeField):
        x = np.concatenate([vf.minus, vf.plus[..., 1:]], axis=-1)
        x[..., self.iface] = 0.5 * (vf.minus[..., -1] + vf.plus[..., 0])
        return x

    def to_field(self, x, torus):
        s = self.split(x)
        return VolumeField(torus, self.slab, s["plus"].copy(), s["minus"].copy())

    @staticmethod
    def interp(f):
        """Nodal layer values -> Gauss-point values (element-major)."""
        a, b = f[..., :-1], f[..., 1:]
        g = np.stack([a + GAUSS_T[0] * (b - a), a + GAUSS_T[1] * (b - a)], axis=-1)
        return g.reshape(f.shape[:-1] + (-1,))

    @staticmethod
    def interp_T(g):
        g = g.reshape(g.shape[:-1] + (-1, 2))
        out = np.zeros(g.shape[:-2] + (g.shape[-2] + 1,), dtype=g.dtype)
        out[..., :-1] += (1 - GAUSS_T[0]) * g[..., 0] + (1 - GAUSS_T[1]) * g[..., 1]
        out[..., 1:] += GAUSS_T[0] * g[..., 0] + GAUSS_T[1] * g[..., 1]
        return out

    def ddz(self, f, layer):
        d = np.diff(f, axis=-1)
        return np.repeat(d, 2, axis=-1) / self.h[layer]

    def ddz_T(self, g, layer):
        g = (g / self.h[layer]).reshape(g.shape[:-1] + (-1, 2)).sum(axis=-1)
        out = np.zeros(g.shape[:-1] + (g.shape[-1] + 1,), dtype=g.dtype)
        out[..., :-1] -= g
        out[..., 1:] += g
        return out


def _stress_fluxes(U, D3, D1, D2, A, B, K, JW, mu, mup):
    """Return (horizontal-transpose input, vertical flux) for the form
    sum W J S(M_u) : M_w with M_ij = Acal_ik d_k u_j."""
    d1, d2 = D1(U), D2(U)
    AK, BK = A * K, B * K
    M = np.stack([d1 - AK * D3, d2 - BK * D3, K * D3])      # M[i, j]
    tr = M[0, 0] + M[1, 1] + M[2, 2]
    S = mu * (M + M.swapaxes(0, 1))
    lam = mup - 2.0 * mu / 3.0
    for i in range(3):
        S[i, i] = S[i, i] + lam * tr
    Q1, Q2 = JW * S[0], JW * S[1]
    Q3 = JW * (-AK * S[0] - BK * S[1] + K * S[2])
    return Q1, Q2, Q3


class _Coefs:
    """Per-layer coefficients at Gauss points."""

    def __init__(self, col, torus, g=None, rho=None):
        self.layers = {}
        for layer in ("plus", "minus"):
            W = torus.dA * col.h[layer] / 2.0
            if g is None or g.is_flat:
                A = B = 0.0
                J = K = 1.0
            else:
                c = g.at(col.zg[layer], layer)
                A, B, J, K = c["A"], c["B"], c["J"], c["K"]
            rJ = None
            if rho is not None:
                rJ = Column.interp(rho.layer(layer)) * J
            self.layers[layer] = dict(A=A, B=B, J=J, K=K, W=W, JW=J * W, rhoJW=None if rJ is None else rJ * W)


class LameOperator:
    """v -> int rho J v.w / dt + <<v, w>> on the discrete space, with a
    set of constrained column nodes (bottom always; interface and top
    for the Dirichlet problem)."""

    def __init__(self, g, rho, dt, params: LameParams, constrained=("bottom",)):
        self.g = g
        self.torus = g.torus
        self.slab = g.slab
        self.params = params
        self.dt = dt
        self.col = Column(self.slab)
        self.coefs = _Coefs(self.col, self.torus, g, rho)
        self.rho = rho
        idx = {"bottom": 0, "interface": self.col.iface, "top": self.col.top}
        self.constrained = tuple(idx[c] for c in constrained)
        self.free = np.ones(self.col.nc, dtype=bool)
        self.free[list(self.constrained)] = False
        self._pre = None
        self.last_info = {}

    # -- actions ------------------------------------------------------------
    def _D(self, direction):
        return lambda f: dx(f, self.torus, direction, VOL_AXES)

    def stiffness(self, x):
        col, D1, D2 = self.col, self._D(1), self._D(2)
        parts = {}
        for layer, u in col.split(x).items():
            c = self.coefs.layers[layer]
            U = col.interp(u)
            D3 = col.ddz(u, layer)
            Q1, Q2, Q3 = _stress_fluxes(U, D3, D1, D2, c["A"], c["B"], c["K"], c["JW"],
                                        self.params.mu(layer), self.params.mup(layer))
            parts[layer] = col.interp_T(-D1(Q1) - D2(Q2)) + col.ddz_T(Q3, layer)
        return col.gather(parts["minus"], parts["plus"])

    def mass(self, x):
        col = self.col
        parts = {}
        for layer, u in col.split(x).items():
            parts[layer] = col.interp_T(self.coefs.layers[layer]["rhoJW"] * col.interp(u))
        return col.gather(parts["minus"], parts["plus"])

    def apply(self, x):
        y = self.stiffness(x)
        if self.dt is not None:
            y = y + self.mass(x) / self.dt
        return y

    # -- preconditioner -----------------------------------------------------
    def _flat_symbols(self):
        torus, col, p = self.torus, self.col, self.params
        ik1, ik2, _, _ = multipliers(torus, VOL_AXES)
        D1 = lambda f: ik1 * f
        D2 = lambda f: ik2 * f
        D1T = lambda f: -ik1 * f
        D2T = lambda f: -ik2 * f
        rhoJW = {}
        if self.dt is not None:
            for layer in ("plus", "minus"):
                rhoJW[layer] = self.coefs.layers[layer]["rhoJW"].mean(axis=(0, 1))
        return _mode_matrices(torus, col, p, D1, D2, D1T, D2T, rhoJW, self.dt, self.free)

    def preconditioner(self):
        if self._pre is None:
            mats = self._flat_symbols()
            self._pre = np.linalg.inv(mats)
        return self._pre

    def apply_pre(self, r):
        P = self.preconditioner()
        R = rfft(r, VOL_AXES)                                  # (3, n1, n2r, nc)
        R = np.moveaxis(R, 0, -2)
        R = R.reshape(R.shape[0], R.shape[1], -1)
        X = np.einsum("abij,abj->abi", P, R)
        X = np.moveaxis(X.reshape(X.shape[0], X.shape[1], 3, self.col.nc), 2, 0)
        return np.fft.irfft2(X, s=self.torus.shape, axes=VOL_AXES)

    # -- solve --------------------------------------------------------------
    def solve(self, b, x0=None):
        """Solve on the free dofs; constrained dofs are returned as zero."""
        shape = (3, *self.torus.shape, self.col.nc)
        n = int(np.prod(shape))
        free = self.free

        def mv(v):
            v = v.reshape(shape)
            return (self.apply(v * free) * free + (~free) * v).ravel()

        def pc(v):
            v = v.reshape(shape)
            return (self.apply_pre(v * free) * free + (~free) * v).ravel()

        A = LinearOperator((n, n), matvec=mv, dtype=float)
        M = LinearOperator((n, n), matvec=pc, dtype=float)
        rhs = (b * free).ravel()
        bnorm = np.linalg.norm(rhs)
        if bnorm == 0:
            self.last_info = dict(iterations=0, residual=0.0)
            return np.zeros(shape)
        its = [0]

        def cb(_):
            its[0] += 1

        x, info = cg(A, rhs, x0=None if x0 is None else (x0 * free).ravel(), rtol=self.params.cg_tol,
                     atol=0.0, maxiter=self.params.cg_maxit, M=M, callback=cb)
        res = np.linalg.norm(mv(x) - rhs) / bnorm
        self.last_info = dict(iterations=its[0], residual=float(res))
        if info != 0 and res > 10 * self.params.cg_tol:
            raise SolveFailure(f"PCG did not converge (info={info}, residual={res:.2e})",
                               residual=float(res), iterations=its[0])
        if not np.all(np.isfinite(x)):
            raise SolveFailure("non-finite Lame solution")
        return x.reshape(shape) * free

    # -- load vectors -------------------------------------------------------
    def volume_load(self, F):
        """Column vector of int J F . phi_i for a nodal VolumeField F."""
        col = self.col
        parts = {layer: col.interp_T(self.coefs.layers[layer]["JW"] * col.interp(F.layer(layer)))
                 for layer in ("plus", "minus")}
        return col.gather(parts["minus"], parts["plus"])

    def surface_load(self, Fp, Fm):
        """Column vector of int_Sigma+ Fp . phi_i + int_Sigma- Fm . phi_i."""
        b = np.zeros((3, *self.torus.shape, self.col.nc))
        dA = self.torus.dA
        if Fp is not None:
            b[..., self.col.top] += dA * Fp
        if Fm is not None:
            b[..., self.col.iface] += dA * Fm
        return b

    # -- quadratic forms ----------------------------------------------------
    def form(self, u, w=None):
        x = self.col.to_column(u)
        y = x if w is None else self.col.to_column(w)
        return float(np.sum(y * self.stiffness(x)))

    def kinetic(self, u):
        """int rho J |u|^2 / 2."""
        x = self.col.to_column(u)
        return 0.5 * float(np.sum(x * self.mass(x)))


def _mode_matrices(torus, col, p, D1, D2, D1T, D2T, rhoJW, dt, free):
    """Dense per-mode matrices (n1, n2r, 3 nc, 3 nc) of the flat operator,
    built by applying it to unit vectors (vectorized over modes)."""
    _, _, mlap, _ = multipliers(torus, VOL_AXES)
    n1, n2r = mlap.shape[0], mlap.shape[1]
    nc = col.nc
    ndof = 3 * nc
    out = np.zeros((n1, n2r, ndof, ndof), dtype=complex)
    for c in range(3):
        for node in range(nc):
            j = c * nc + node
            if not free[node]:
                out[:, :, j, j] = 1.0
                continue
            X = np.zeros((3, n1, n2r, nc), dtype=complex)
            X[c, ..., node] = 1.0
            parts = {}
            for layer, u in col.split(X).items():
                W = torus.dA * col.h[layer] / 2.0
                U = col.interp(u)
                D3 = col.ddz(u, layer)
                Q1, Q2, Q3 = _stress_fluxes(U, D3, D1, D2, 0.0, 0.0, 1.0, W, p.mu(layer), p.mup(layer))
                r = col.interp_T(D1T(Q1) + D2T(Q2)) + col.ddz_T(Q3, layer)
                if dt is not None:
                    r = r + col.interp_T(rhoJW[layer] * U) / dt
                parts[layer] = r
            y = col.gather(parts["minus"], parts["plus"]) * free
            out[:, :, :, j] = np.moveaxis(y, 0, -2).reshape(n1, n2r, ndof)
    return out


# ---------------------------------------------------------------- public API


@dataclass
class TractionData:
    F2_plus: np.ndarray          # (3, n1, n2)
    F2_minus: np.ndarray
    sigma_plus: float = 0.0
    sigma_minus: float = 0.0
    eta_plus: np.ndarray = None
    eta_minus: np.ndarray = None

    def effective(self, torus):
        """F2 - sigma lap(eta) N on each surface."""
        out = []
        for F, s, eta in ((self.F2_plus, self.sigma_plus, self.eta_plus),
                          (self.F2_minus, self.sigma_minus, self.eta_minus)):
            F = np.zeros((3, *torus.shape)) if F is None else np.asarray(F, dtype=float)
            if s and eta is not None:
                g1, g2 = grad_h(eta, torus)
                N = np.stack([-g1, -g2, np.ones_like(g1)])
                F = F - s * lap_h(eta, torus) * N
            out.append(F)
        return out


def check_density(rho: VolumeField, bounds):
    if bounds is None:
        return
    lo, hi = bounds
    rmin = min(rho.plus.min(), rho.minus.min())
    rmax = max(rho.plus.max(), rho.minus.max())
    if rmin < lo or rmax > hi or not rho.is_finite():
        raise DensityOutOfRange(f"density range [{rmin:.4g}, {rmax:.4g}] leaves [{lo:.4g}, {hi:.4g}]",
                                rho_min=float(rmin), rho_max=float(rmax))


def assemble_lame(g, rho, dt, params=None, rho_bounds=None, jacobian_floor=None):
    params = params or LameParams()
    floor = g.jacobian_floor if jacobian_floor is None else jacobian_floor
    if g.min_J <= floor:
        raise DegenerateJacobian(f"min J = {g.min_J:.4g} at or below {floor}", min_J=float(g.min_J))
    check_density(rho, rho_bounds)
    return LameOperator(g, rho, dt, params)


def solve_lame_step(op: LameOperator, u_prev: VolumeField, F1: VolumeField, tr: TractionData, x0=None):
    """Backward Euler: int rho J (u - u_prev)/dt . w + <<u, w>>
    = int J F1 . w - int_Sigma (F2 - sigma lap(eta) N) . w."""
    col = op.col
    Fp, Fm = tr.effective(op.torus)
    b = -op.surface_load(Fp, Fm)
    if F1 is not None:
        b = b + op.volume_load(F1)
    if u_prev is not None and op.dt is not None:
        b = b + op.mass(col.to_column(u_prev)) / op.dt
    x = op.solve(b, None if x0 is None else col.to_column(x0))
    return col.to_field(x, op.torus)


def solve_lame_dirichlet(g, G, h_plus, h_minus, params=None):
    """-div_A S_A u = G weakly, with u = h_plus on Sigma+, u = h_minus on
    Sigma-, u = 0 on the bottom.  Boundary data are 3-vector surface arrays."""
    params = params or LameParams()
    op = LameOperator(g, None, None, params, constrained=("bottom", "interface", "top"))
    col = op.col
    lift = np.zeros((3, *g.torus.shape, col.nc))
    if h_plus is not None:
        lift[..., col.top] = h_plus
    if h_minus is not None:
        lift[..., col.iface] = h_minus
    b = -op.stiffness(lift)
    if G is not None:
        b = b + op.volume_load(G)
    x = op.solve(b) + lift
    return col.to_field(x, g.torus)


# ---------------------------------------------------------------- H1 and Korn


class H1Gram:
    """Discrete H1 inner product sum W (u.w + grad u : grad w) on the P1 column
    (flat metric), with per-mode dense Riesz solves."""

    def __init__(self, torus, slab, constrained=("bottom",)):
        self.torus, self.slab = torus, slab
        self.col = Column(slab)
        idx = {"bottom": 0, "interface": self.col.iface, "top": self.col.top}
        self.free = np.ones(self.col.nc, dtype=bool)
        self.free[[idx[c] for c in constrained]] = False
        self._inv = None

    def _apply(self, x, D1, D2, D1T, D2T):
        col = self.col
        parts = {}
        for layer, u in col.split(x).items():
            W = self.torus.dA * col.h[layer] / 2.0
            U = col.interp(u)
            D3 = col.ddz(u, layer)
            parts[layer] = col.interp_T(W * U + D1T(W * D1(U)) + D2T(W * D2(U))) + col.ddz_T(W * D3, layer)
        return col.gather(parts["minus"], parts["plus"])

    def apply(self, x):
        D1 = lambda f: dx(f, self.torus, 1, VOL_AXES)
        D2 = lambda f: dx(f, self.torus, 2, VOL_AXES)
        return self._apply(x, D1, D2, lambda f: -D1(f), lambda f: -D2(f))

    def norm_sq(self, u: VolumeField):
        x = self.col.to_column(u)
        return float(np.sum(x * self.apply(x)))

    def mode_matrices(self):
        ik1, ik2, _, _ = multipliers(self.torus, VOL_AXES)
        n1, n2r = ik1.shape[0], ik2.shape[1]
        nc = self.col.nc
        out = np.zeros((n1, n2r, 3 * nc, 3 * nc), dtype=complex)
        for c in range(3):
            for node in range(nc):
                j = c * nc + node
                if not self.free[node]:
                    out[:, :, j, j] = 1.0
                    continue
                X = np.zeros((3, n1, n2r, nc), dtype=complex)
                X[c, ..., node] = 1.0
                y = self._apply(X, lambda f: ik1 * f, lambda f: ik2 * f,
                                lambda f: -ik1 * f, lambda f: -ik2 * f) * self.free
                out[:, :, :, j] = np.moveaxis(y, 0, -2).reshape(n1, n2r, 3 * nc)
        return out

    def riesz(self, b):
        """Solve Gram w = b on the free dofs, mode by mode."""
        if self._inv is None:
            self._inv = np.linalg.inv(self.mode_matrices())
        nc = self.col.nc
        R = rfft(b * self.free, VOL_AXES)
        R = np.moveaxis(R, 0, -2)
        R = R.reshape(R.shape[0], R.shape[1], -1)
        X = np.einsum("abij,abj->abi", self._inv, R)
        X = np.moveaxis(X.reshape(X.shape[0], X.shape[1], 3, nc), 2, 0)
        return np.fft.irfft2(X, s=self.torus.shape, axes=VOL_AXES) * self.free


def korn_ratio(u: VolumeField, g, params=None):
    """<<u, u>> / ||u||_{H1}^2 for an admissible u (bottom value ignored)."""
    params = params or LameParams()
    op = LameOperator(g, None, None, params)
    gram = H1Gram(g.torus, g.slab)
    x = op.col.to_column(u) * op.free
    den = float(np.sum(x * gram.apply(x)))
    if den <= 0 or not np.isfinite(den):
        raise ZeroField("korn_ratio needs a nonzero admissible field")
    return float(np.sum(x * op.stiffness(x))) / den


def korn_constant_flat(torus, slab, params=None):
    """Smallest generalized eigenvalue of the flat stiffness against the H1
    Gram matrix over all horizontal modes (constrained dofs removed)."""
    params = params or LameParams()
    col = Column(slab)
    free = np.ones(col.nc, dtype=bool)
    free[0] = False
    ik1, ik2, _, _ = multipliers(torus, VOL_AXES)
    K = _mode_matrices(torus, col, params, lambda f: ik1 * f, lambda f: ik2 * f,
                       lambda f: -ik1 * f, lambda f: -ik2 * f, {}, None, free)
    G = H1Gram(torus, slab).mode_matrices()
    keep = np.tile(free, 3)
    lam = np.inf
    for a in range(K.shape[0]):
        for b in range(K.shape[1]):
            w = eigh(K[a, b][np.ix_(keep, keep)], G[a, b][np.ix_(keep, keep)], eigvals_only=True,
                     subset_by_index=[0, 0])
            lam = min(lam, float(w[0]))
    return lam


def dense_matrix(op: LameOperator, with_mass=True):
    """Dense constrained operator matrix (free dofs only); desk-scale tests."""
    shape = (3, *op.torus.shape, op.col.nc)
    free_mask = np.broadcast_to(op.free, shape).ravel()
    idx = np.flatnonzero(free_mask)
    n = idx.size
    A = np.zeros((n, n))
    for k, i in enumerate(idx):
        e = np.zeros(int(np.prod(shape)))
        e[i] = 1.0
        y = (op.apply(e.reshape(shape)) if with_mass else op.stiffness(e.reshape(shape))).ravel()
        A[:, k] = y[idx]
    return A
