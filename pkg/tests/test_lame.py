import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twolayer.fields import SlabSpec, SurfaceField, TorusSpec, VolumeField
from twolayer.geometry import build_geometry, flat_geometry
from twolayer.lame import (H1Gram, LameOperator, LameParams, TractionData, dense_matrix, korn_ratio,
                           solve_lame_step)
from twolayer.verify import lame_contraction_ratios, lame_space_errors, lame_time_errors, observed_order

TORUS = TorusSpec(1.0, 1.0, 8, 8)
SLAB = SlabSpec(1.0, 1.0, 7, 7)


def wavy_geometry(a=0.04):
    X1, X2 = TORUS.grid()
    return build_geometry(SurfaceField(TORUS, a * np.cos(X1 + X2)),
                          SurfaceField(TORUS, 0.5 * a * np.sin(X1), "minus"), SLAB)


def random_velocity(rng):
    u = VolumeField(TORUS, SLAB, rng.normal(size=(3, *TORUS.shape, 7)), rng.normal(size=(3, *TORUS.shape, 7)))
    u.minus[..., 0] = 0.0
    u.minus[..., -1] = u.plus[..., 0]
    return u


def test_viscosity_condition():
    with pytest.raises(ValueError):
        LameParams(mu_plus=0.0)
    with pytest.raises(ValueError):
        LameParams(mup_minus=-0.1)


def test_manufactured_space_order():
    errs = lame_space_errors()
    assert observed_order(errs)[-1] >= 1.9


def test_backward_euler_time_order():
    errs = lame_time_errors(ns=(4, 8, 16), n_ref=128)
    assert observed_order(errs)[-1] >= 0.9


def test_operator_symmetric_positive():
    op = LameOperator(wavy_geometry(), VolumeField.zeros(TORUS, SLAB) + 1.0, 0.1, LameParams())
    rng = np.random.default_rng(1)
    u, w = random_velocity(rng), random_velocity(rng)
    assert op.form(u, w) == pytest.approx(op.form(w, u), rel=1e-10)
    assert op.form(u) > 0


def test_dense_matrix_symmetric():
    torus, slab = TorusSpec(1.0, 1.0, 4, 4), SlabSpec(1.0, 1.0, 6, 6)
    op = LameOperator(flat_geometry(torus, slab), VolumeField.zeros(torus, slab) + 1.0, 0.5, LameParams())
    A = dense_matrix(op)
    assert np.allclose(A, A.T, atol=1e-12 * np.abs(A).max())
    assert np.linalg.eigvalsh(0.5 * (A + A.T)).min() > 0


def test_korn_ratio_positive_on_wavy_geometry():
    rng = np.random.default_rng(2)
    g = wavy_geometry()
    for _ in range(5):
        assert korn_ratio(random_velocity(rng), g) > 0


def test_unforced_step_contracts():
    assert max(lame_contraction_ratios(count=30, seed=3)) <= 1.0 + 1e-12


@settings(max_examples=10, deadline=None)
@given(st.floats(0.01, 2.0), st.integers(0, 10_000))
def test_unforced_step_contracts_any_dt(dt, seed):
    rng = np.random.default_rng(seed)
    op = LameOperator(wavy_geometry(), VolumeField.zeros(TORUS, SLAB) + 1.2, dt, LameParams())
    u0 = random_velocity(rng)
    u1 = solve_lame_step(op, u0, None, TractionData(None, None))
    assert op.kinetic(u1) <= op.kinetic(u0) * (1 + 1e-12)


def test_h1_riesz_inverts_gram():
    gram = H1Gram(TORUS, SLAB)
    rng = np.random.default_rng(4)
    x = gram.col.to_column(random_velocity(rng)) * gram.free
    b = gram.apply(x) * gram.free
    assert np.allclose(gram.riesz(b), x, atol=1e-9 * np.abs(x).max())
