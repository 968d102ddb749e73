import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twolayer.errors import DegenerateJacobian, DomainError
from twolayer.fields import SlabSpec, SurfaceField, TorusSpec
from twolayer.geometry import (QuinticBumps, build_geometry, default_lambdas, flat_geometry,
                               poisson_extend_interface, poisson_extend_upper, vandermonde_coeffs,
                               vandermonde_residual)
from twolayer.verify import cm_gap_ladder, observed_order

TORUS = TorusSpec(1.0, 1.0, 16, 16)
SLAB = SlabSpec(1.0, 1.0, 17, 17)


def surf(a=0.05, b=0.0):
    X1, X2 = TORUS.grid()
    return a * np.cos(X1) * np.sin(X2) + b * np.cos(2 * X1 + X2)


def test_vandermonde_hand_case_m1():
    # nodes (1, 2): alpha solves a + b = 1, -a - 2b = 1  ->  (3, -2)
    assert np.array_equal(vandermonde_coeffs([1.0, 2.0]), np.array([3.0, -2.0]))


def test_vandermonde_m6_against_dense_solve():
    lam = default_lambdas(6)
    alpha = vandermonde_coeffs(lam)
    V = (-lam[None, :]) ** np.arange(7)[:, None]
    dense = np.linalg.solve(V, np.ones(7))
    assert np.allclose(alpha, dense, rtol=1e-8)
    assert vandermonde_residual(lam, alpha) <= 1e-10


@pytest.mark.parametrize("bad", [[1.0], [2.0, 1.0], [-1.0, 1.0], [1.0, 1.0]])
def test_vandermonde_rejects_bad_nodes(bad):
    with pytest.raises(DomainError):
        vandermonde_coeffs(bad)


def test_bumps_anchor_values():
    assert QuinticBumps(1.0, 2.0).anchor_residual() == 0.0


def test_trace_recovery():
    ep, em = surf(), surf(0.02, 0.01)
    up = poisson_extend_upper(SurfaceField(TORUS, ep), SLAB)
    it = poisson_extend_interface(SurfaceField(TORUS, em, "minus"), SLAB)
    assert np.max(np.abs(up.plus[..., -1] - ep)) <= 1e-10
    assert np.max(np.abs(it.plus[..., 0] - em)) <= 1e-10
    assert np.max(np.abs(it.minus[..., -1] - em)) <= 1e-10


def test_mean_mode_extends_as_constant():
    c = np.full(TORUS.shape, 0.3)
    up = poisson_extend_upper(SurfaceField(TORUS, c), SLAB)
    assert np.allclose(up.plus, 0.3, atol=1e-14) and np.allclose(up.minus, 0.3, atol=1e-14)


def test_interface_extension_cm_gap_converges_at_fd_order():
    gaps = cm_gap_ladder(m=6)
    for g in gaps:
        assert observed_order(g).min() >= 1.9


def test_flat_geometry_identity():
    g = flat_geometry(TORUS, SLAB)
    assert g.min_J == pytest.approx(1.0, abs=1e-14)


def test_huge_surface_is_degenerate():
    X1, _ = TORUS.grid()
    with pytest.raises(DegenerateJacobian):
        build_geometry(SurfaceField(TORUS, 2.0 * np.cos(X1)), SurfaceField.zeros(TORUS, "minus"), SLAB)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.1, 0.1), st.floats(-0.1, 0.1), st.floats(-0.05, 0.05))
def test_small_surfaces_keep_jacobian_positive(a, b, c):
    X1, X2 = TORUS.grid()
    ep = a * np.cos(X1 + X2) + b * np.sin(2 * X1)
    em = c * np.cos(X2)
    g = build_geometry(SurfaceField(TORUS, ep), SurfaceField(TORUS, em, "minus"), SLAB)
    assert g.min_J > 0.5
    up = poisson_extend_upper(SurfaceField(TORUS, ep), SLAB)
    assert np.max(np.abs(up.plus[..., -1] - ep)) <= 1e-12
