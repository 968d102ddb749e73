"""Hydrostatic equilibrium of the two layers and the enthalpy functions."""
import csv
import re
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicHermiteSpline

from .errors import AdmissibilityFailure, DomainError, ValidationError


@dataclass(frozen=True)
class PressureLaw:
    """Barotropic law P(rho).  kind is 'isothermal' (P = c^2 rho) or
    'polytropic' (P = K rho^gamma)."""
    kind: str
    a: float            # c for isothermal, K for polytropic
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("isothermal", "polytropic"):
            raise ValidationError(f"unknown pressure law {self.kind!r}")
        if not self.a > 0:
            raise ValidationError("pressure law coefficient must be positive")
        if self.kind == "polytropic" and not self.gamma >= 1:
            raise ValidationError("polytropic exponent must be >= 1")

    @classmethod
    def isothermal(cls, c):
        return cls("isothermal", float(c))

    @classmethod
    def polytropic(cls, K, gamma):
        return cls("polytropic", float(K), float(gamma))

    @classmethod
    def parse(cls, text):
        m = re.fullmatch(r"\s*(isothermal|polytropic)\s*\(([^)]*)\)\s*", text)
        if not m:
            raise ValidationError(f"cannot parse pressure law {text!r}")
        try:
            args = [float(x) for x in m.group(2).split(",") if x.strip()]
        except ValueError:
            raise ValidationError(f"non-numeric pressure law argument in {text!r}") from None
        if m.group(1) == "isothermal":
            if len(args) != 1:
                raise ValidationError("isothermal(c) takes one argument")
            return cls.isothermal(*args)
        if len(args) != 2:
            raise ValidationError("polytropic(K, gamma) takes two arguments")
        return cls.polytropic(*args)

    def __str__(self):
        if self.kind == "isothermal":
            return f"isothermal({self.a!r})"
        return f"polytropic({self.a!r}, {self.gamma!r})"

    def P(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "isothermal":
            return self.a**2 * r
        return self.a * r**self.gamma

    def dP(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "isothermal":
            return np.full_like(r, self.a**2)
        return self.a * self.gamma * r ** (self.gamma - 1)

    def d2P(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "isothermal" or self.gamma == 1:
            return np.zeros_like(r)
        return self.a * self.gamma * (self.gamma - 1) * r ** (self.gamma - 2)

    def inverse(self, p, bracket=(1e-12, 1e12), tol=1e-15, maxit=200):
        """Safeguarded Newton for P(r) = p on the bracket."""
        lo, hi = bracket
        if not (self.P(lo) <= p <= self.P(hi)):
            raise AdmissibilityFailure(f"pressure {p!r} not attained on the density bracket {bracket}",
                                       pressure=float(p))
        r = np.clip(p / self.dP(1.0), lo, hi) if self.kind == "isothermal" else 0.5 * (lo + min(hi, 1e3))
        for _ in range(maxit):
            f = float(self.P(r)) - p
            if f > 0:
                hi = r
            else:
                lo = r
            step = f / float(self.dP(r))
            rn = r - step
            if not (lo < rn < hi):
                rn = 0.5 * (lo + hi)
            if abs(rn - r) <= tol * max(1.0, abs(rn)):
                return float(rn)
            r = rn
        raise AdmissibilityFailure("pressure inversion did not converge", pressure=float(p))


def _rk4_profile(law, g, r0, z, rtol=1e-13, max_sub=1024):
    """Integrate d rho/dy = -g rho / P'(rho) from z[0] along the grid z.

    Each grid interval is covered by RK4 substeps, doubled until two
    successive substep counts agree to rtol (steep profiles need more)."""
    f = lambda r: -g * r / law.dP(r)

    def advance(r, H, sub):
        h = H / sub
        for _ in range(sub):
            k1 = f(r)
            k2 = f(r + 0.5 * h * k1)
            k3 = f(r + 0.5 * h * k2)
            k4 = f(r + h * k3)
            r = r + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        return r

    out = np.empty(len(z))
    out[0] = r = r0
    sub = 4
    for i in range(len(z) - 1):
        H = z[i + 1] - z[i]
        coarse = advance(r, H, sub)
        while True:
            fine = advance(r, H, 2 * sub)
            if abs(fine - coarse) <= rtol * abs(fine) or 2 * sub >= max_sub:
                break
            sub *= 2
            coarse = fine
        r = fine
        if not (r > 0 and np.isfinite(r)):
            raise AdmissibilityFailure("equilibrium density left the positive range", y3=float(z[i + 1]))
        out[i + 1] = r
    return out


class EquilibriumProfile:
    """rho_bar on each layer with derivative closures; evaluable off-grid by
    cubic Hermite interpolation (slopes from the ODE itself)."""

    def __init__(self, law_plus, law_minus, g, p_atm, z_plus, z_minus, rho_plus, rho_minus):
        self.laws = {"plus": law_plus, "minus": law_minus}
        self.g = g
        self.p_atm = p_atm
        self.z = {"plus": np.asarray(z_plus), "minus": np.asarray(z_minus)}
        self.rho = {"plus": np.asarray(rho_plus), "minus": np.asarray(rho_minus)}
        self.rho1 = float(rho_plus[-1])
        self.rho_plus0 = float(rho_plus[0])
        self.rho_minus0 = float(rho_minus[-1])
        self.jump = self.rho_plus0 - self.rho_minus0
        self._spl = {k: CubicHermiteSpline(self.z[k], self.rho[k], self._slope(k, self.rho[k]))
                     for k in ("plus", "minus")}

    def _slope(self, layer, r):
        return -self.g * r / self.laws[layer].dP(r)

    @property
    def rho_bar_plus(self):
        return self.rho["plus"]

    @property
    def rho_bar_minus(self):
        return self.rho["minus"]

    def d_rho_bar(self, layer, z=None):
        r = self.rho[layer] if z is None else self(layer, z)
        return self._slope(layer, r)

    def d2_rho_bar(self, layer, z=None):
        r = self.rho[layer] if z is None else self(layer, z)
        law = self.laws[layer]
        d1 = self._slope(layer, r)
        return -self.g * d1 / law.dP(r) + self.g * r * law.d2P(r) * d1 / law.dP(r) ** 2

    def __call__(self, layer, z):
        return self._spl[layer](np.asarray(z, dtype=float))

    # enthalpy with base points rho1 (upper) and rho_minus0 (lower)
    def base(self, layer):
        return self.rho1 if layer == "plus" else self.rho_minus0

    def enthalpy(self, layer, z, rtol=1e-12):
        if z <= 0:
            raise DomainError("enthalpy needs a positive density", z=z)
        law = self.laws[layer]
        val, _ = quad(lambda r: float(law.dP(r)) / r, self.base(layer), z, epsabs=0.0, epsrel=rtol, limit=200)
        return val

    def enthalpy_derivative(self, layer, z):
        z = np.asarray(z, dtype=float)
        if np.any(z <= 0):
            raise DomainError("enthalpy needs a positive density")
        return self.laws[layer].dP(z) / z

    def hydrostatic_residual(self):
        """max |d P(rho)/dy + g rho| at interior nodes (4th-order differences)."""
        from .fields import dz
        res = 0.0
        for k in ("plus", "minus"):
            p = self.laws[k].P(self.rho[k])
            r = dz(p, self.z[k]) + self.g * self.rho[k]
            res = max(res, float(np.max(np.abs(r[2:-2]))))
        return res

    def matching_residuals(self):
        top = abs(float(self.laws["plus"].P(self.rho1)) - self.p_atm)
        iface = abs(float(self.laws["plus"].P(self.rho_plus0)) - float(self.laws["minus"].P(self.rho_minus0)))
        return top, iface

    def total_mass(self, area):
        from .fields import quad_weights
        return area * sum(float(quad_weights(self.z[k]) @ self.rho[k]) for k in ("plus", "minus"))

    def rows(self):
        for k in ("minus", "plus"):
            law = self.laws[k]
            zz, rr = self.z[k], self.rho[k]
            for y, r in zip(zz, rr):
                yield float(y), float(r), float(law.P(r)), float(law.dP(r) / r)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y3", "rho_bar", "P", "h_prime"])
            for row in self.rows():
                w.writerow([repr(v) for v in row])


def solve_equilibrium(law_plus, law_minus, g, p_atm, ell, b, nz_plus=129, nz_minus=129,
                      bracket=(1e-12, 1e12)):
    if not (g > 0 and p_atm > 0 and ell > 0 and b > 0):
        raise ValidationError("g, p_atm, ell and b must be positive")
    zp = np.linspace(0.0, ell, nz_plus)
    zm = np.linspace(-b, 0.0, nz_minus)
    r1 = law_plus.inverse(p_atm, bracket)
    rp = _rk4_profile(law_plus, g, r1, zp[::-1])[::-1]
    p_star = float(law_plus.P(rp[0]))
    rm0 = law_minus.inverse(p_star, bracket)
    rm = _rk4_profile(law_minus, g, rm0, zm[::-1])[::-1]
    return EquilibriumProfile(law_plus, law_minus, g, p_atm, zp, zm, rp, rm)
