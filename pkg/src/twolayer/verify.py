"""Built-in verification batteries, one per module.

Each suite returns a list of rows (dicts with suite, check, value, threshold,
relation, passed).  Failures are data: a suite never raises for a failed
check, only for a broken environment.
"""
import math
import time
from decimal import Decimal, getcontext
from fractions import Fraction
from math import factorial

import numpy as np

from .equilibrium import PressureLaw, solve_equilibrium
from .errors import DegenerateJacobian
from .fields import SlabSpec, SurfaceField, TorusSpec, VolumeField, dx, fd_weights, lap_h, multipliers
from .geometry import (_profile_interface, default_lambdas, flat_geometry, build_geometry,
                       poisson_extend_interface, poisson_extend_upper, vandermonde_coeffs,
                       vandermonde_residual)
from .lame import LameOperator, LameParams, TractionData, korn_constant_flat, solve_lame_dirichlet, solve_lame_step
from .norms import volume_norm
from .stepper import Model, advance_time_step, build_model_state, check_compatibility, pressure_remainder
from .surface import advance_eta_kappa, advance_eta_kinematic, build_xi_corrector, kappa_ladder

SUITES = ("geometry", "equilibrium", "lame", "transport", "surface", "coupled")


def row(suite, check, value, threshold, relation="<="):
    value = float(value)
    if relation == "<=":
        ok = value <= threshold
    elif relation == ">=":
        ok = value >= threshold
    elif relation == "in":
        ok = threshold[0] <= value <= threshold[1]
    else:
        raise ValueError(relation)
    ok = bool(ok) and math.isfinite(value)
    thr = list(threshold) if relation == "in" else float(threshold)
    return dict(suite=suite, check=check, value=value, threshold=thr, relation=relation, passed=ok)


def observed_order(errors, ratio=2.0):
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(ratio)


def _surface(torus, a=1.0):
    X1, X2 = torus.grid()
    return a * (np.cos(X1 / torus.L1) * np.sin(X2 / torus.L2) + 0.3 * np.cos(2 * X1 / torus.L1 + X2 / torus.L2))


# ---------------------------------------------------------------- geometry


def _fd_weights_exact(n, k):
    """Rational weights c with sum_i c_i f(i h) = h^k f^(k)(0) + O(h^n) (one-sided, unit spacing)."""
    A = [[Fraction(i) ** m for i in range(n)] + [Fraction(factorial(k) if m == k else 0)] for m in range(n)]
    for c in range(n):
        piv = next(r for r in range(c, n) if A[r][c] != 0)
        A[c], A[piv] = A[piv], A[c]
        for r in range(n):
            if r != c and A[r][c] != 0:
                f = A[r][c] / A[c][c]
                A[r] = [x - f * y for x, y in zip(A[r], A[c])]
    return [A[i][n] / A[i][i] for i in range(n)]


def cm_gap_ladder(m=6, hs=(5e-4, 2.5e-4, 1.25e-4), accuracy=2, modes=(1.0, 2.0), digits=80):
    """One-sided FD estimates of d^k/dz^k of the interface extension profile at
    z = 0 from above and below; gaps[k-1][level] for k = 1..m.

    The closed-form profiles are evaluated in extended decimal precision with
    exact rational stencils so the gap shows the truncation order instead of
    cancellation in the 1/h^k weights.
    """
    lam = default_lambdas(m)
    alpha = vandermonde_coeffs(lam)
    getcontext().prec = digits
    A = [Decimal(float(a)) for a in alpha]
    L = [Decimal(float(l)) for l in lam]

    def upper(x, z):
        return sum(a * (-(l * x * z)).exp() for a, l in zip(A, L))

    def lower(x, z):
        return (x * z).exp()

    gaps = []
    for k in range(1, m + 1):
        n = k + accuracy
        c = [Decimal(w.numerator) / Decimal(w.denominator) for w in _fd_weights_exact(n, k)]
        level = []
        for h in hs:
            H = Decimal(str(h))
            worst = 0.0
            for xi in modes:
                X = Decimal(str(xi))
                dp = sum(ci * upper(X, i * H) for i, ci in enumerate(c)) / H ** k
                dm = sum(ci * lower(X, -i * H) for i, ci in enumerate(c)) / (-H) ** k
                worst = max(worst, abs(float(dp - dm)))
            level.append(worst)
        gaps.append(level)
    return gaps


def suite_geometry():
    S = "geometry"
    rows = []
    torus = TorusSpec(2 * np.pi, 2 * np.pi, 16, 16)
    slab = SlabSpec(1.0, 1.0, 17, 17)
    ep, em = _surface(torus, 0.05), _surface(torus, 0.03)
    up = poisson_extend_upper(SurfaceField(torus, ep), slab)
    im = poisson_extend_interface(SurfaceField(torus, em, "minus"), slab)
    rows.append(row(S, "trace_top", np.max(np.abs(up.plus[..., -1] - ep)), 1e-10))
    rows.append(row(S, "trace_interface_plus", np.max(np.abs(im.plus[..., 0] - em)), 1e-10))
    rows.append(row(S, "trace_interface_minus", np.max(np.abs(im.minus[..., -1] - em)), 1e-10))
    # exact derivative matching at the interface, k = 0..6
    # row-scaled like the Vandermonde residual: the sum over j alternates in sign
    lam = default_lambdas(6)
    alpha = vandermonde_coeffs(lam)
    worst = 0.0
    for k in range(7):
        a = poisson_extend_interface(SurfaceField(torus, em, "minus"), slab, z=np.array([0.0]), layer="plus", k=k)
        b = poisson_extend_interface(SurfaceField(torus, em, "minus"), slab, z=np.array([0.0]), layer="minus", k=k)
        scale = float(np.sum(np.abs(alpha) * lam**k)) * max(np.max(np.abs(b)), 1e-300)
        worst = max(worst, float(np.max(np.abs(a - b))) / scale)
    rows.append(row(S, "cm_match_exact_m6", worst, 1e-10))
    gaps = cm_gap_ladder()
    orders = [observed_order(g).min() for g in gaps]
    rows.append(row(S, "cm_gap_fd_order_min_k1to6", min(orders), 1.9, ">="))
    # harmonicity of the top extension and of the lower interface extension
    z = slab.z_plus
    f0 = poisson_extend_upper(SurfaceField(torus, ep), slab, z=z, layer="plus")
    f2 = poisson_extend_upper(SurfaceField(torus, ep), slab, z=z, layer="plus", k=2)
    lap = np.moveaxis(lap_h(np.moveaxis(f0, -1, 0), torus), 0, -1) + f2
    rows.append(row(S, "harmonic_top_extension", np.max(np.abs(lap)) / np.max(np.abs(f2)), 1e-10))
    zm = slab.z_minus
    g0 = poisson_extend_interface(SurfaceField(torus, em, "minus"), slab, z=zm, layer="minus")
    g2 = poisson_extend_interface(SurfaceField(torus, em, "minus"), slab, z=zm, layer="minus", k=2)
    lap = np.moveaxis(lap_h(np.moveaxis(g0, -1, 0), torus), 0, -1) + g2
    rows.append(row(S, "harmonic_lower_extension", np.max(np.abs(lap)) / np.max(np.abs(g2)), 1e-10))
    lam = default_lambdas(6)
    rows.append(row(S, "vandermonde_residual_m6", vandermonde_residual(lam, vandermonde_coeffs(lam)), 1e-10))
    a1 = vandermonde_coeffs([1.0, 2.0])
    rows.append(row(S, "vandermonde_m1_hand_case", np.max(np.abs(a1 - np.array([3.0, -2.0]))), 0.0))
    g = build_geometry(SurfaceField(torus, ep), SurfaceField(torus, em, "minus"), slab)
    rows.append(row(S, "min_J_small_surfaces", g.min_J, 0.1, ">="))
    try:
        build_geometry(SurfaceField(torus, 2.0 * np.cos(torus.grid()[0])), SurfaceField.zeros(torus, "minus"), slab)
        raised = 0.0
    except DegenerateJacobian:
        raised = 1.0
    rows.append(row(S, "huge_surface_rejected", raised, 1.0, ">="))
    return rows


# ---------------------------------------------------------------- equilibrium


def isothermal_closed_form(c_plus, c_minus, g, p_atm, ell, b, zp, zm):
    rp = p_atm / c_plus**2 * np.exp(g * (ell - zp) / c_plus**2)
    p_star = p_atm * np.exp(g * ell / c_plus**2)
    rm = p_star / c_minus**2 * np.exp(-g * zm / c_minus**2)
    return rp, rm, p_star


def suite_equilibrium(nz=129):
    S = "equilibrium"
    rows = []
    cp, cm = 1.0, math.sqrt(0.5)
    g, p_atm, ell, b = 1.0, 1.0, 1.0, 1.0
    eq = solve_equilibrium(PressureLaw.isothermal(cp), PressureLaw.isothermal(cm), g, p_atm, ell, b, nz, nz)
    rp, rm, p_star = isothermal_closed_form(cp, cm, g, p_atm, ell, b, eq.z["plus"], eq.z["minus"])
    err = max(np.max(np.abs(eq.rho_bar_plus - rp)), np.max(np.abs(eq.rho_bar_minus - rm)))
    rows.append(row(S, "isothermal_closed_form_maxerr", err, 1e-8))
    top, iface = eq.matching_residuals()
    rows.append(row(S, "top_pressure_matching", top, 1e-10))
    rows.append(row(S, "interface_pressure_matching", iface, 1e-10))
    jump = p_star * (1 / cp**2 - 1 / cm**2)
    rows.append(row(S, "density_jump_identity", abs(eq.jump - jump) / abs(jump), 1e-8))
    same = solve_equilibrium(PressureLaw.isothermal(cp), PressureLaw.isothermal(cp), g, p_atm, ell, b, nz, nz)
    rows.append(row(S, "equal_laws_zero_jump", abs(same.jump), 1e-13))
    poly = solve_equilibrium(PressureLaw.polytropic(1.0, 1.4), PressureLaw.polytropic(2.0, 1.4), g, p_atm, ell, b, nz, nz)
    rows.append(row(S, "polytropic_hydrostatic_residual", poly.hydrostatic_residual(), 1e-6))
    rows.append(row(S, "polytropic_matching", max(poly.matching_residuals()), 1e-10))
    rho = eq.rho1 * (1 + 0.1 * np.linspace(-1, 1, 11))
    R = pressure_remainder(PressureLaw.isothermal(cp), eq.rho1, rho)
    rows.append(row(S, "isothermal_remainder_zero", np.max(np.abs(R)), 0.0))
    return rows


# ---------------------------------------------------------------- lame


def _manufactured(torus, slab, params):
    """(u_exact, G) with G = -div S(u) on the flat slab; u vanishes at the bottom."""
    X1, X2 = torus.grid()
    b = slab.b
    e = [np.cos(X1 / torus.L1 + i * X2 / torus.L2 + i) for i in range(3)]
    d = lambda f, j: dx(f, torus, j)

    def prof(layer, i, z, k):
        if layer == "plus":
            w = i + 1.0
            if k == 0:
                return b * np.cos(z) + np.sin(w * z)
            if k == 1:
                return -b * np.sin(z) + w * np.cos(w * z)
            return -b * np.cos(z) - w * w * np.sin(w * z)
        a = 0.5 * (i + 1.0)
        ez = np.exp(a * z)
        if k == 0:
            return (z + b) * ez
        if k == 1:
            return ez * (1 + a * (z + b))
        return ez * (2 * a + a * a * (z + b))

    U, G = {}, {}
    for layer in ("plus", "minus"):
        z = slab.z(layer)
        mu = params.mu(layer)
        lam = params.mup(layer) - 2.0 * mu / 3.0
        f = [[prof(layer, i, z, k) for k in range(3)] for i in range(3)]
        E = [e[i][..., None] for i in range(3)]
        dE = [[d(e[i], j)[..., None] for j in (1, 2)] for i in range(3)]
        ddE = [[[d(d(e[i], j), l)[..., None] for l in (1, 2)] for j in (1, 2)] for i in range(3)]
        u = np.stack([E[i] * f[i][0] for i in range(3)])
        lap = np.stack([(ddE[i][0][0] + ddE[i][1][1]) * f[i][0] + E[i] * f[i][2] for i in range(3)])
        gd = []
        for i in (0, 1):
            gd.append(sum(ddE[j][i][j] * f[j][0] for j in (0, 1)) + dE[2][i] * f[2][1])
        gd.append(sum(dE[j][j] * f[j][1] for j in (0, 1)) + E[2] * f[2][2])
        U[layer] = u
        G[layer] = -mu * lap - (mu + lam) * np.stack(gd)
    return VolumeField(torus, slab, U["plus"], U["minus"]), VolumeField(torus, slab, G["plus"], G["minus"])


def lame_space_errors(nzs=(9, 17, 33), n=8, params=None):
    params = params or LameParams()
    errs = []
    for nz in nzs:
        torus = TorusSpec(2 * np.pi, 2 * np.pi, n, n)
        slab = SlabSpec(1.0, 1.0, nz, nz)
        u, G = _manufactured(torus, slab, params)
        g = flat_geometry(torus, slab)
        uh = solve_lame_dirichlet(g, G, u.plus[..., -1], u.plus[..., 0], params)
        errs.append((uh - u).max_abs() / u.max_abs())
    return errs


def lame_time_errors(T=0.5, ns=(4, 8, 16), n_ref=256, n=8, nz=9, params=None):
    """Backward-Euler self-convergence of the forced Lame step at time T."""
    params = params or LameParams()
    torus = TorusSpec(2 * np.pi, 2 * np.pi, n, n)
    slab = SlabSpec(1.0, 1.0, nz, nz)
    g = flat_geometry(torus, slab)
    rho = VolumeField.zeros(torus, slab) + 1.0
    _, G = _manufactured(torus, slab, params)
    zero = TractionData(None, None)

    def run(m):
        dt = T / m
        op = LameOperator(g, rho, dt, params)
        u = VolumeField.zeros(torus, slab, 1)
        for k in range(1, m + 1):
            u = solve_lame_step(op, u, G * math.cos(3.0 * k * dt), zero)
        return u

    ref = run(n_ref)
    return [(run(m) - ref).max_abs() / ref.max_abs() for m in ns]


def lame_contraction_ratios(count=100, seed=0, n=8, nz=7, params=None):
    """sqrt(kinetic(u) / kinetic(u_prev)) for unforced steps from random admissible states."""
    params = params or LameParams()
    rng = np.random.default_rng(seed)
    torus = TorusSpec(1.0, 1.0, n, n)
    slab = SlabSpec(1.0, 1.0, nz, nz)
    X1, X2 = torus.grid()
    ratios = []
    per_geom = 10
    zero = TractionData(None, None)
    for gi in range(count // per_geom):
        a = rng.uniform(-0.05, 0.05, 4)
        ep = a[0] * np.cos(X1 + X2) + a[1] * np.sin(2 * X1)
        em = a[2] * np.cos(X1) + a[3] * np.sin(X2 - X1)
        g = build_geometry(SurfaceField(torus, ep), SurfaceField(torus, em, "minus"), slab)
        rho = VolumeField(torus, slab, 1.0 + 0.2 * np.cos(X1)[..., None] * np.ones(slab.nz_plus),
                          1.5 + 0.2 * np.sin(X2)[..., None] * np.ones(slab.nz_minus))
        op = LameOperator(g, rho, float(rng.uniform(0.01, 1.0)), params)
        for _ in range(per_geom):
            c = rng.normal(size=(2, 3, 6))
            parts = []
            for l, z in (("plus", slab.z_plus), ("minus", slab.z_minus)):
                ci = c[0 if l == "plus" else 1]
                zz = z + slab.b
                parts.append(np.stack([(ci[i, 0] * np.cos(X1) + ci[i, 1] * np.sin(X2) + ci[i, 2] * np.cos(X1 - 2 * X2)
                                        + ci[i, 3])[..., None] * (zz * (1 + ci[i, 4] * zz)) for i in range(3)]))
            u0 = VolumeField(torus, slab, parts[0], parts[1])
            u0.minus[..., 0] = 0.0
            u0.minus[..., -1] = u0.plus[..., 0]
            k0 = op.kinetic(u0)
            u1 = solve_lame_step(op, u0, None, zero)
            ratios.append(math.sqrt(op.kinetic(u1) / k0))
    return ratios


def suite_lame():
    S = "lame"
    rows = []
    es = lame_space_errors()
    rows.append(row(S, "manufactured_space_order", observed_order(es)[-1], 1.9, ">="))
    et = lame_time_errors()
    rows.append(row(S, "time_order_backward_euler", observed_order(et)[-1], 0.9, ">="))
    ks = []
    for n, nz in ((8, 9), (16, 17), (32, 33)):
        ks.append(korn_constant_flat(TorusSpec(2 * np.pi, 2 * np.pi, n, n), SlabSpec(1.0, 1.0, nz, nz)))
    rows.append(row(S, "korn_constant_positive", min(ks), 0.0, ">="))
    rows.append(row(S, "korn_constant_spread", (max(ks) - min(ks)) / min(ks), 0.2))
    cr = lame_contraction_ratios()
    rows.append(row(S, "unforced_contraction_max_ratio_100", max(cr), 1.0 + 1e-12))
    return rows


# ---------------------------------------------------------------- transport


TRANSPORT_LADDER = ((8, 9, 0.2, 10), (16, 17, 0.1, 20), (32, 33, 0.05, 40))


def transport_ladder(preset, ladder=TRANSPORT_LADDER):
    from .transport import mollified_reference_solve, solve_transport, transport_preset
    gaps = []
    for n, nz, eps, ns in ladder:
        torus = TorusSpec(1.0, 1.0, n, n)
        slab = SlabSpec(1.0, 1.0, nz, nz)
        q0, hist, _ = transport_preset(preset, torus, slab, t_end=1.0, nsteps=ns)
        gaps.append(volume_norm(solve_transport(q0, hist) - mollified_reference_solve(q0, hist, eps), 0))
    return gaps


def transport_gronwall(preset, n=16, nz=17, ns=20):
    from .transport import History, gronwall_bound_check, solve_transport, transport_preset
    torus = TorusSpec(1.0, 1.0, n, n)
    slab = SlabSpec(1.0, 1.0, nz, nz)
    q0, hist, _ = transport_preset(preset, torus, slab, t_end=1.0, nsteps=ns)
    qs = [q0]
    for k in range(1, len(hist)):
        qs.append(solve_transport(q0, History(hist.times[: k + 1], hist.coeffs[: k + 1])))
    return gronwall_bound_check(qs, hist)


def suite_transport():
    S = "transport"
    rows = []
    for preset in ("advection", "decay"):
        gaps = transport_ladder(preset)
        rows.append(row(S, f"{preset}_cross_gap_finest", gaps[-1], 1e-4))
        rows.append(row(S, f"{preset}_gap_monotone", float(all(b < a for a, b in zip(gaps, gaps[1:]))), 1.0, ">="))
    for preset in ("advection", "decay", "source"):
        rep = transport_gronwall(preset)
        rows.append(row(S, f"{preset}_gronwall_C_finite", rep["C"] if rep["valid"] else float("inf"), 1e3))
    return rows


# ---------------------------------------------------------------- surface


def small_model(n=8, nz=9, **kw):
    torus = TorusSpec(1.0, 1.0, n, n)
    slab = SlabSpec(1.0, 1.0, nz, nz)
    eq = solve_equilibrium(PressureLaw.isothermal(1.0), PressureLaw.isothermal(math.sqrt(0.5)),
                           1.0, 1.0, 1.0, 1.0, nz, nz)
    kw.setdefault("sigma_plus", 0.1)
    kw.setdefault("sigma_minus", 0.1)
    return Model(torus, slab, eq, **kw)


def surface_ladder(kappas=(0.1, 0.05, 0.025), n=8, nz=9, dt=0.01, t_end=0.1):
    from .stepper import integrate

    def run(k):
        model = small_model(n, nz, kappa=k, use_kappa=k > 0)
        st, _ = build_model_state(model, "small_data")
        traj = [(st.t, np.asarray(st.eta))]
        integrate(model, st, dt, t_end, 25, 1e-10, on_commit=lambda i, s: traj.append((s.t, np.asarray(s.eta))))
        return traj

    return kappa_ladder(run, list(kappas), TorusSpec(1.0, 1.0, n, n))


def suite_surface():
    S = "surface"
    rows = []
    torus = TorusSpec(1.0, 1.0, 16, 16)
    X1, X2 = torus.grid()
    eta = np.stack([np.cos(X1 + 2 * X2), np.sin(3 * X1)])
    zero = np.zeros((2, 3, *torus.shape))
    kappa, dt = 0.3, 0.05
    out = advance_eta_kappa(eta, zero, zero, None, kappa, dt, 0.0, torus)
    exact = np.stack([np.exp(-5 * kappa * dt) * eta[0], np.exp(-9 * kappa * dt) * eta[1]])
    rows.append(row(S, "heat_mode_decay_exact", np.max(np.abs(out - exact)), 1e-13))
    lift = zero.copy()
    lift[:, 2] = 0.7
    out = advance_eta_kinematic(eta, lift, lift, dt, torus)
    rows.append(row(S, "kinematic_uniform_lift_exact", np.max(np.abs(out - eta - 0.7 * dt)), 1e-14))
    # translation: u = (U, 0, 0) gives eta(x - U t)
    U, T = 0.4, 0.5
    errs = []
    for m in (10, 20, 40):
        tr = zero.copy()
        tr[:, 0] = U
        e = eta.copy()
        for _ in range(m):
            e = advance_eta_kinematic(e, tr, tr, T / m, torus, cfl_max=10.0)
        ex = np.stack([np.cos(X1 - U * T + 2 * X2), np.sin(3 * (X1 - U * T))])
        errs.append(np.max(np.abs(e - ex)))
    rows.append(row(S, "kinematic_heun_order", observed_order(errs)[-1], 1.9, ">="))
    chain = [eta, 0.5 * eta, -0.25 * eta]
    xi = build_xi_corrector(torus, chain)
    worst = max(float(np.max(np.abs(xi(0.0, j) - lap_h(chain[j], torus)))) for j in range(3))
    rows.append(row(S, "xi_corrector_initial_derivatives", worst, 1e-10))
    rep = surface_ladder()
    rows.append(row(S, "kappa_ladder_min_order", min(rep.orders), 0.9, ">="))
    return rows


# ---------------------------------------------------------------- coupled


def suite_coupled():
    from .diagnostics import energy_identity_residual, mass_total
    S = "coupled"
    rows = []
    model = small_model()
    st, _ = build_model_state(model, "equilibrium")
    m0 = mass_total(st)
    s = st
    for _ in range(10):
        s = advance_time_step(model, s, 0.01)
    rows.append(row(S, "equilibrium_fixed_point", max(s.u.max_abs(), s.q.max_abs(), np.max(np.abs(s.eta))), 1e-16))
    rows.append(row(S, "equilibrium_mass_drift", abs(mass_total(s) - m0) / m0, 1e-12))
    model = small_model()
    st, chain = build_model_state(model, "small_data")
    comp = check_compatibility(chain, model)
    rows.append(row(S, "compatibility_order0", max(comp["traction_top_0"], comp["traction_interface_0"]), 1e-12))
    m0 = mass_total(st)
    s = st
    ratios = []
    for _ in range(5):
        s = advance_time_step(model, s, 0.01, tol=1e-11)
        ratios += [r for r in s.record["ratios"][1:] if np.isfinite(r)]
    rows.append(row(S, "small_data_mass_drift", abs(mass_total(s) - m0) / m0, 1e-6))
    rows.append(row(S, "picard_ratio_max", max(ratios) if ratios else 0.0, 0.5))
    res = []
    for dt in (4e-3, 2e-3, 1e-3):
        s1 = advance_time_step(model, s, dt, tol=1e-13)
        res.append(energy_identity_residual(s1.record, s1, model))
    halving = [b / a for a, b in zip(res, res[1:])]
    rows.append(row(S, "energy_residual_halving_min", min(halving), (0.45, 0.55), "in"))
    rows.append(row(S, "energy_residual_halving_max", max(halving), (0.45, 0.55), "in"))
    try:
        build_model_state(small_model(), "huge_eta")
        aborted = 0.0
    except DegenerateJacobian:
        aborted = 1.0
    rows.append(row(S, "huge_eta_aborts", aborted, 1.0, ">="))
    return rows


_RUNNERS = dict(geometry=suite_geometry, equilibrium=suite_equilibrium, lame=suite_lame,
                transport=suite_transport, surface=suite_surface, coupled=suite_coupled)


def run_suite(name):
    if name not in _RUNNERS:
        raise KeyError(name)
    t0 = time.perf_counter()
    rows = _RUNNERS[name]()
    return dict(suite=name, rows=rows, passed=all(r["passed"] for r in rows), wall_time=time.perf_counter() - t0)


def format_table(result):
    lines = ["suite\tcheck\tvalue\trelation\tthreshold\tstatus"]
    for r in result["rows"]:
        lines.append(f"{r['suite']}\t{r['check']}\t{r['value']:.6g}\t{r['relation']}\t{r['threshold']}\t"
                     f"{'PASS' if r['passed'] else 'FAIL'}")
    return "\n".join(lines)
