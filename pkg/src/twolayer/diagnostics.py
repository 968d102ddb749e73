"""Energy and dissipation functionals, the basic energy balance, mass."""
import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InsufficientHistory
from .fields import VolumeField, fd_weights, grad_h, lap_h, quad_weights
from .lame import Column, H1Gram
from .norms import surface_norm_sq, volume_norm_sq, _layer_hk_sq

# re-exported so callers find every norm here
from .norms import surface_norm, volume_norm, ck_norm  # noqa: F401


def sobolev_norm(f, s, spec=None, s_max=5):
    """Sobolev norm of a surface array (spec required) or a VolumeField."""
    if isinstance(f, VolumeField):
        return volume_norm(f, s, s_max)
    if spec is None:
        raise ValueError("surface norms need the torus spec")
    return surface_norm(f, spec, s)


def horizontal_sum_sq(f: VolumeField, m, k):
    """sum over horizontal multi-indices |alpha| <= m of ||d^alpha f||_k^2,
    each distinct derivative counted once."""
    return sum(_layer_hk_sq(f.layer(l), f.slab.z(l), f.torus, k, extra_h=m) for l in ("plus", "minus"))


# ---------------------------------------------------------------- dual norm


def _flat_load(F: VolumeField):
    col = Column(F.slab)
    parts = {}
    for l in ("plus", "minus"):
        W = F.torus.dA * col.h[l] / 2.0
        parts[l] = col.interp_T(W * col.interp(F.layer(l)))
    return col.gather(parts["minus"], parts["plus"])


def dual_norm_Hstar(F: VolumeField, gram: H1Gram = None, return_riesz=False):
    """Norm of v -> int F . v on the admissible discrete space via the Riesz map."""
    gram = gram or H1Gram(F.torus, F.slab)
    b = _flat_load(F) * gram.free
    w = gram.riesz(b)
    val = float(np.sqrt(max(float(np.sum(b * w)), 0.0)))
    if return_riesz:
        return val, gram.col.to_field(w, F.torus)
    return val


def pairing(F: VolumeField, v: VolumeField):
    col = Column(F.slab)
    x = col.to_column(v)
    x[..., 0] = 0.0
    return float(np.sum(_flat_load(F) * x))


# ---------------------------------------------------------------- mass


def mass_total(state=None, rho=None, J=None):
    """int rho J over both layers."""
    if state is not None:
        rho, J = state.rho, state.geometry.J
    total = 0.0
    for l in ("plus", "minus"):
        w = quad_weights(rho.slab.z(l))
        total += rho.torus.dA * float(np.sum((rho.layer(l) * J.layer(l)) @ w))
    return total


# ---------------------------------------------------------------- functionals


@dataclass
class FunctionalReport:
    E_u: float
    E_q: float
    E_eta_sigma: float
    Ehat_eta_sigma: float
    D_u: float
    D_u_weak: float
    D_q: float
    D_eta_sigma: float
    Dhat_eta_sigma: float
    L_eta: float
    TE: float
    N: int
    absent: list = field(default_factory=list)

    def as_row(self):
        d = asdict(self)
        d["absent"] = ";".join(d["absent"])
        return d


def backward_derivatives(values, times, order):
    """d^j/dt^j at the last time for j = 0..order, one-sided differences over
    the last order + 1 levels (exact for polynomials of degree <= order)."""
    t = np.asarray(times, dtype=float)[-(order + 1):]
    vals = list(values)[-(order + 1):]
    if len(vals) < order + 1:
        raise InsufficientHistory(f"need {order + 1} levels, have {len(vals)}", have=len(vals))
    W = fd_weights(t, t[-1], order)
    out = [vals[-1]]
    for j in range(1, order + 1):
        acc = vals[0] * float(W[0, j])
        for wi, v in zip(W[1:, j], vals[1:]):
            acc = acc + v * float(wi)
        out.append(acc)
    return out


def _sigma_col(sigma):
    return np.asarray(sigma, dtype=float).reshape(2, 1, 1)


def _eta_grad_sq(f, spec, s, weight):
    g1, g2 = grad_h(f, spec)
    return surface_norm_sq(weight * g1, spec, s) + surface_norm_sq(weight * g2, spec, s)


def energy_functionals(history, spec, sigma, N=1, chain=None, max_order=2):
    """Functionals at the last entry of history = [(t, u, q, eta), ...].

    Time derivatives are backward differences over the stored levels up to
    order max_order; terms that would need more are listed in `absent`.
    """
    need = min(2 * N, max_order) + 1
    if len(history) < need:
        raise InsufficientHistory(f"need {need} stored levels, have {len(history)}", have=len(history))
    hist = history[-need:]
    times = [h[0] for h in hist]
    order = need - 1
    U = backward_derivatives([h[1] for h in hist], times, order)
    Q = backward_derivatives([h[2] for h in hist], times, order)
    H = backward_derivatives([np.asarray(h[3], dtype=float) for h in hist], times, order)
    sig = _sigma_col(sigma)
    rs = np.sqrt(sig)
    n4 = 4 * N
    absent = []
    vn = lambda f, s: volume_norm_sq(f, s, s_max=max(5, n4 + 1))
    sn = lambda f, s: surface_norm_sq(f, spec, s)

    def avail(j, label):
        if j > order:
            absent.append(label)
            return False
        return True

    E_u = sum(vn(U[j], n4 - 2 * j) for j in range(0, 2 * N + 1) if avail(j, f"E_u:d{j}"))
    D_u = sum(vn(U[j], n4 - 2 * j + 1) for j in range(0, 2 * N + 1) if avail(j, f"D_u:d{j}"))
    D_u_weak = vn(U[0], n4) + horizontal_sum_sq(U[0], n4 - 1, 2) + \
        sum(vn(U[j], n4 - 2 * j + 1) for j in range(1, 2 * N + 1) if avail(j, f"D_u_weak:d{j}"))
    E_q = vn(Q[0], n4) + sum(vn(Q[j], n4 - 2 * j + 1) for j in range(1, 2 * N + 1) if avail(j, f"E_q:d{j}"))
    D_q = vn(Q[0], n4) + (vn(Q[1], n4 - 1) if avail(1, "D_q:d1") else 0.0) + \
        sum(vn(Q[j], n4 - 2 * j + 2) for j in range(2, 2 * N + 2) if avail(j, f"D_q:d{j}"))
    E_eta = sum(sn(H[j], n4 - 2 * j) + _eta_grad_sq(H[j], spec, n4 - 2 * j, rs)
                for j in range(0, 2 * N + 1) if avail(j, f"E_eta:d{j}"))
    D_eta = sn(sig * H[0], n4 + 1.5) + (sn(H[1], n4 - 1) if avail(1, "D_eta:d1") else 0.0) + \
        sum(sn(H[j], n4 - 2 * j + 2) for j in range(2, 2 * N + 2) if avail(j, f"D_eta:d{j}"))
    Ehat = E_eta + sum(sn(H[j], n4 - 2 * j + 1.5) for j in range(1, 2 * N + 1) if avail(j, f"Ehat:d{j}"))
    Dhat = D_eta + (sn(H[1], n4 - 0.5) if order >= 1 else 0.0) + \
        sum(sn(H[j], n4 - 2 * j + 2.5) for j in range(2, 2 * N + 1) if avail(j, f"Dhat:d{j}"))
    L_eta = sn(H[0], n4 - 0.5)
    TE = float("nan") if chain is None else total_data_functional(chain, spec, sigma, N)
    return FunctionalReport(E_u, E_q, E_eta, Ehat, D_u, D_u_weak, D_q, D_eta, Dhat, L_eta, TE, N,
                            sorted(set(absent)))


def total_data_functional(chain, spec, sigma, N=1):
    """The data functional built from the chain entries j <= J_max."""
    n4 = 4 * N
    J = min(chain.J_max, 2 * N)
    rs = np.sqrt(_sigma_col(sigma))
    vn = lambda f, s: volume_norm_sq(f, s, s_max=max(5, n4 + 1))
    sn = lambda f, s: surface_norm_sq(f, spec, s)
    te_u = sum(vn(chain.u[j], n4 - 2 * j) for j in range(J + 1))
    te_q = vn(chain.q[0], n4) + sum(vn(chain.q[j], n4 - 2 * j + 1) for j in range(1, J + 1))
    e0 = np.asarray(chain.eta[0])
    te_eta = sn(e0, n4 + 0.5) + _eta_grad_sq(e0, spec, n4, rs) + \
        sum(sn(chain.eta[j], n4 - 2 * j + 1.5) for j in range(1, J + 1))
    return te_u + te_q + te_eta


# ---------------------------------------------------------------- energy balance


def energy_identity_terms(rec, state, model):
    """Both sides of the basic energy balance over one committed step.

    d/dt is the backward difference across the step; every integral uses the
    same quadrature as the discrete Lame problem (kinetic energy, viscous form,
    loads) or Parseval on the grid (surface terms).
    """
    spec = model.torus
    dt = rec["dt"]
    op = rec["op"]
    fo = rec["forcing"]
    u1, eta1 = state.u, np.asarray(state.eta)
    eta0 = np.asarray(rec["eta_prev"])
    sig = _sigma_col((model.sigma_plus, model.sigma_minus))
    kappa = model.kappa if model.use_kappa else 0.0
    dA = spec.dA

    def surf_energy(e):
        g1, g2 = grad_h(e, spec)
        return 0.5 * dA * float(np.sum(e * e + sig * (g1 * g1 + g2 * g2)))

    kin1 = state.kinetic
    kin0 = rec["kinetic_prev"]
    lhs = (kin1 - kin0) / dt + (surf_energy(eta1) - surf_energy(eta0)) / dt + op.form(u1)
    lap = lap_h(eta1, spec)
    g1, g2 = grad_h(eta1, spec)
    if kappa:
        lhs += kappa * dA * float(np.sum(g1 * g1 + g2 * g2 + sig * lap * lap))
    x1 = op.col.to_column(u1)
    tr = model.trace(u1)                                  # (2, 3, n1, n2)
    F2 = np.stack([fo.F2_plus, fo.F2_minus])
    normal = np.stack([-g1, -g2, np.ones_like(g1)], axis=1)  # (2, 3, n1, n2)
    udotN = np.sum(tr * normal, axis=1)
    rhs = (rec["kinetic_prev_new_mass"] - kin0) / dt
    rhs += float(np.sum(op.volume_load(fo.F1) * x1))
    rhs -= dA * float(np.sum(F2 * tr))
    rhs += dA * float(np.sum(eta1 * udotN))
    if kappa and rec.get("xi") is not None:
        rhs += kappa * dA * float(np.sum(rec["xi"] * (-eta1 + sig * lap)))
    return lhs, rhs


def energy_identity_residual(rec, state, model, eps=1e-300):
    lhs, rhs = energy_identity_terms(rec, state, model)
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), eps)


# ---------------------------------------------------------------- CSV


CSV_FIELDS = ["step", "t", "dt", "E_u", "E_q", "E_eta_sigma", "Ehat_eta_sigma", "D_u", "D_u_weak", "D_q",
              "D_eta_sigma", "Dhat_eta_sigma", "L_eta", "TE", "N", "absent", "mass", "mass_drift",
              "energy_residual", "picard_iterations", "contraction_ratio", "rho_min", "rho_max", "min_J"]


class DiagnosticsWriter:
    """One CSV row per committed step."""

    def __init__(self, path):
        self.fh = open(path, "w", newline="")
        self.w = csv.DictWriter(self.fh, fieldnames=CSV_FIELDS)
        self.w.writeheader()

    def write(self, row):
        self.w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items() if k in CSV_FIELDS})
        self.fh.flush()

    def close(self):
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
