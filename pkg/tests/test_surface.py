import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twolayer.errors import CFLViolation
from twolayer.fields import TorusSpec
from twolayer.surface import (ProfileFamily, TimeExtension, build_xi_corrector, check_cfl, etd_heun,
                              kappa_ladder, kinematic_rhs, psi, surface_h1)

SPEC = TorusSpec(1.0, 1.0, 16, 16)
X1, X2 = SPEC.grid()


def test_psi_vanishes_outside_unit_interval():
    s = np.array([-2.0, -1.0, 1.0, 1.5])
    for k in range(4):
        assert np.all(psi(s, k) == 0.0)
    assert psi(np.array([0.0]))[0] == 1.0


def test_psi_derivative_by_differences():
    s, h = np.array([0.3]), 1e-5
    for k in range(3):
        fd = (psi(s + h, k) - psi(s - h, k)) / (2 * h)
        assert fd[0] == pytest.approx(psi(s, k + 1)[0], rel=1e-7)


@pytest.mark.parametrize("jmax", [0, 1, 2, 3])
def test_profile_family_derivatives_at_zero(jmax):
    fam = ProfileFamily(jmax)
    zero = np.array([0.0])
    M = np.array([[fam(j, zero, k)[0] for k in range(jmax + 1)] for j in range(jmax + 1)])
    assert np.allclose(M, np.eye(jmax + 1), atol=1e-11)


def test_xi_matches_laplacian_chain():
    chain = [np.stack([np.cos(X1 + X2), np.sin(2 * X1)]),
             np.stack([np.sin(X2), np.cos(X1)]),
             np.stack([np.cos(3 * X1), np.zeros_like(X1)])]
    xi = build_xi_corrector(SPEC, chain, jmax=2)
    lap_factor = [np.array([-2.0, -4.0]), np.array([-1.0, -1.0]), np.array([-9.0, 0.0])]
    for k, (c, lf) in enumerate(zip(chain, lap_factor)):
        assert np.allclose(xi(0.0, k), lf[:, None, None] * c, atol=1e-10)


def test_time_extension_decays():
    ext = TimeExtension(SPEC, [np.cos(X1)])
    assert np.max(np.abs(ext(5.0))) == 0.0        # phi_0 has support in [0, 1)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(1e-3, 0.5), st.integers(1, 3))
def test_heat_step_exact(kappa, dt, k):
    eta = np.stack([np.cos(k * X1), np.sin(k * X2)])
    out = etd_heun(eta, lambda e, t, s: np.zeros_like(e), kappa, dt, 0.0, SPEC)
    assert np.allclose(out, eta * np.exp(-kappa * k * k * dt), atol=1e-13)


def test_constant_forcing_exact():
    # d_t eta - kappa lap eta = c cos x1: phi1 integrates this exactly
    kappa, dt = 0.3, 0.2
    f = np.stack([np.cos(X1), np.cos(X1)])
    out = etd_heun(np.zeros_like(f), lambda e, t, s: f, kappa, dt, 0.0, SPEC)
    assert np.allclose(out, f * (1 - np.exp(-kappa * dt)) / kappa, atol=1e-13)


def test_kinematic_rhs_flat_surface_is_vertical_velocity():
    u = np.zeros((2, 3, *SPEC.shape))
    u[:, 0] = np.sin(X2)
    u[:, 2] = np.stack([np.cos(X1 - X2), np.sin(2 * X1)])
    assert np.allclose(kinematic_rhs(np.zeros((2, *SPEC.shape)), u, SPEC), u[:, 2])


def test_cfl_violation_raised():
    u = np.ones((2, 3, *SPEC.shape)) * 100.0
    with pytest.raises(CFLViolation):
        check_cfl((u, u), SPEC, 0.1, 0.5)
    assert check_cfl((u * 0, u * 0), SPEC, 0.1, 0.5) == 0.0


def test_ladder_rejects_bad_kappas():
    with pytest.raises(ValueError):
        kappa_ladder(lambda k: [], [0.1, 0.2], SPEC)
    with pytest.raises(ValueError):
        kappa_ladder(lambda k: [], [0.1, 0.0], SPEC)


def test_ladder_on_synthetic_runs():
    base = np.stack([np.cos(X1), np.cos(X2)])
    rep = kappa_ladder(lambda k: [(0.0, base), (1.0, base * (1 + k))], [0.1, 0.05], SPEC)
    assert rep.orders[0] == pytest.approx(1.0)
    assert rep.deviations[0] == pytest.approx(0.1 * surface_h1(base, SPEC))
