"""Free-surface updates.

Surface pairs are stored as arrays of shape (2, n1, n2): index 0 is the top
surface, index 1 the interface.  Velocity traces have shape (2, 3, n1, n2).

Both updates share one exponential-Heun step.  With kappa = 0 the
integrating factor is exactly 1 and the step is plain Heun (SSP-RK2), so the
kinematic path and the kappa path are literally the same arithmetic.
"""
from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import CFLViolation
from .fields import dealiased, full_modulus, grad_h, multipliers, rfft, irfft


# ---------------------------------------------------------------- profiles


@lru_cache(maxsize=16)
def _psi_derivative_reps(kmax):
    """psi^(k)(s) = N_k(s) / (1 - s^2)^{m_k} * psi(s), psi = exp(-s^2/(1-s^2))."""
    reps = [(np.array([1.0]), 0)]
    one_m_s2 = np.array([1.0, 0.0, -1.0])
    s = np.array([0.0, 1.0])
    for _ in range(kmax):
        N, m = reps[-1]
        dN = npoly.polyder(N) if N.size > 1 else np.array([0.0])
        t1 = npoly.polymul(dN,
                           npoly.polymul(one_m_s2, one_m_s2))
        t2 = 2 * m * npoly.polymul(npoly.polymul(s, N), one_m_s2)
        t3 = -2 * npoly.polymul(s, N)
        reps.append((npoly.polyadd(npoly.polyadd(t1, t2), t3), m + 2))
    return reps


def psi(s, k=0):
    """k-th derivative of the bump exp(-s^2/(1-s^2)) on |s| < 1, zero outside."""
    s = np.asarray(s, dtype=float)
    N, m = _psi_derivative_reps(k)[k]
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    si = s[inside]
    d = 1.0 - si * si
    out[inside] = npoly.polyval(si, N) / d**m * np.exp(-si * si / d)
    return out


class ProfileFamily:
    """phi_j = p_j * psi with phi_j^(k)(0) = delta_jk for j, k <= jmax."""

    def __init__(self, jmax=2):
        self.jmax = jmax
        n = jmax + 1
        dpsi0 = np.array([float(psi(np.array([0.0]), k)[0]) for k in range(n)])
        # phi^(k)(0) = sum_i C(k, i) p^(i)(0) psi^(k-i)(0), with p^(i)(0) = i! c_i
        L = np.zeros((n, n))
        for k in range(n):
            for i in range(k + 1):
                L[k, i] = comb(k, i) * factorial(i) * dpsi0[k - i]
        self.coef = np.linalg.solve(L, np.eye(n))      # column j: coefficients of p_j

    def __call__(self, j, s, k=0):
        """k-th derivative of phi_j at s."""
        c = self.coef[:, j]
        out = np.zeros_like(np.asarray(s, dtype=float))
        for i in range(k + 1):
            pi = npoly.polyder(c, i) if i else c
            out = out + comb(k, i) * npoly.polyval(s, pi) * psi(s, k - i)
        return out


# ---------------------------------------------------------------- corrector


class TimeExtension:
    """F(t) with hat F(xi, t) = sum_j phi_j(t <xi>^2) f_j(xi) <xi>^{-2j}.

    f_list[j] is the target k-th time derivative at t = 0 (grid arrays, any
    leading shape).  With first_order_zero the j = 0 term uses phi_0(t <xi>).
    """

    def __init__(self, spec, f_list, jmax=None, first_order_zero=False):
        self.spec = spec
        self.jmax = len(f_list) - 1 if jmax is None else jmax
        self.family = ProfileFamily(max(self.jmax, 0))
        self.F = [rfft(np.asarray(f, dtype=float)) for f in f_list[: self.jmax + 1]]
        _, _, _, kmod = multipliers(spec)
        self.br = np.sqrt(1.0 + kmod**2)
        self.first_order_zero = first_order_zero

    def __call__(self, t, k=0):
        """k-th time derivative at time t."""
        out = 0.0
        for j, Fj in enumerate(self.F):
            rate = self.br if (j == 0 and self.first_order_zero) else self.br**2
            fac = self.family(j, t * rate, k) * rate**k * self.br ** (-2.0 * j)
            out = out + fac * Fj
        if isinstance(out, float):
            return 0.0
        return irfft(out, self.spec)


def build_xi_corrector(spec, eta_chain, jmax=2):
    """Xi with d_t^j Xi(0) = lap(d_t^j eta(0)) for j <= jmax.

    eta_chain[j] is the (2, n1, n2) array of d_t^j eta at t = 0; for j >= 1
    these are the time derivatives of u . N at t = 0 by the kinematic equation.
    """
    _, _, mlap, _ = multipliers(spec)
    f = [irfft(mlap * rfft(np.asarray(e, dtype=float)), spec) for e in eta_chain[: jmax + 1]]
    return TimeExtension(spec, f, jmax)


# ---------------------------------------------------------------- updates


def kinematic_rhs(eta, u_trace, spec):
    """u . N = u3 - u1 d1 eta - u2 d2 eta, products on the padded grid."""
    g1, g2 = grad_h(eta, spec)
    return dealiased(lambda a, b, c, d, e: c - a * d - b * e, spec,
                     u_trace[:, 0], u_trace[:, 1], u_trace[:, 2], g1, g2)


def check_cfl(u_traces, spec, dt, cfl_max):
    kmax = float(full_modulus(spec)[2].max())
    umax = max(float(np.max(np.hypot(u[:, 0], u[:, 1]))) for u in u_traces)
    c = dt * umax * kmax
    if c > cfl_max:
        raise CFLViolation(f"surface Courant number {c:.3g} exceeds {cfl_max}", courant=c)
    return c


def etd_heun(eta, rhs, kappa, dt, t, spec):
    """One exponential-Heun step of d_t eta - kappa lap eta = rhs(eta, t).

    Each mode: eta* = E eta + dt phi1 R(eta, t),
    eta_new = E eta + dt phi1 (R(eta, t) + R(eta*, t + dt)) / 2,
    with E = exp(-kappa |xi|^2 dt) and phi1(z) = (1 - e^{-z}) / z.
    """
    _, _, mlap, _ = multipliers(spec)
    z = -kappa * mlap * dt
    E = np.exp(-z)
    with np.errstate(invalid="ignore", divide="ignore"):
        phi1 = np.where(z > 1e-12, -np.expm1(-z) / np.where(z > 0, z, 1.0), 1.0 - 0.5 * z)
    H = rfft(eta)
    R0 = rfft(rhs(eta, t, 0))
    star = irfft(E * H + dt * phi1 * R0, spec)
    R1 = rfft(rhs(star, t + dt, 1))
    return irfft(E * H + dt * phi1 * 0.5 * (R0 + R1), spec)


def advance_eta_kappa(eta, u_now, u_next, xi, kappa, dt, t, spec, cfl_max=None):
    """Step d_t eta - kappa lap eta = u . N - kappa Xi with u linear in time
    across the step (u_now at t, u_next at t + dt)."""
    if cfl_max is not None:
        check_cfl((u_now, u_next), spec, dt, cfl_max)
    us = (u_now, u_next)

    def rhs(e, tt, stage):
        r = kinematic_rhs(e, us[stage], spec)
        if kappa and xi is not None:
            r = r - kappa * xi(tt)
        return r

    return etd_heun(eta, rhs, kappa, dt, t, spec)


def advance_eta_kinematic(eta, u_now, u_next, dt, spec, cfl_max=0.5):
    """d_t eta = u . N by Heun; identical to the kappa step at kappa = 0."""
    return advance_eta_kappa(eta, u_now, u_next, None, 0.0, dt, 0.0, spec, cfl_max)


def eta_time_derivative(eta, u_trace, xi, kappa, t, spec):
    """Right side of the surface equation (used for d_t theta)."""
    r = kinematic_rhs(eta, u_trace, spec)
    if kappa:
        _, _, mlap, _ = multipliers(spec)
        r = r + kappa * irfft(mlap * rfft(eta), spec)
        if xi is not None:
            r = r - kappa * xi(t)
    return r


# ---------------------------------------------------------------- kappa ladder


def surface_h1(f, spec):
    """Discrete H1 norm of a (2, n1, n2) surface pair."""
    c = np.fft.fft2(f, axes=(-2, -1)) * (2 * np.pi * np.sqrt(spec.L1 * spec.L2) / (spec.n1 * spec.n2))
    br2 = full_modulus(spec)[3] ** 2
    return float(np.sqrt(np.sum(br2 * np.abs(c) ** 2)))


@dataclass
class LadderReport:
    kappas: list
    deviations: list
    orders: list

    def as_dict(self):
        return dict(kappas=self.kappas, deviations=self.deviations, orders=self.orders)


def kappa_ladder(run, kappas, spec):
    """run(kappa) -> list of (t, eta) with eta of shape (2, n1, n2); kappa = 0
    is the kinematic reference.  Reports max-in-time H1 deviation per kappa
    and the observed order between consecutive entries."""
    kappas = [float(k) for k in kappas]
    if any(b >= a for a, b in zip(kappas, kappas[1:])) or min(kappas) <= 0:
        raise ValueError("kappa list must be positive and strictly decreasing")
    ref = run(0.0)
    devs = []
    for k in kappas:
        traj = run(k)
        if len(traj) != len(ref):
            raise ValueError("runs at different kappa produced different step counts")
        devs.append(max(surface_h1(e - r, spec) for (_, e), (_, r) in zip(traj, ref)))
    orders = []
    for i in range(1, len(kappas)):
        if devs[i] > 0 and devs[i - 1] > 0:
            orders.append(float(np.log(devs[i - 1] / devs[i]) / np.log(kappas[i - 1] / kappas[i])))
        else:
            orders.append(float("nan"))
    return LadderReport(kappas, devs, orders)
