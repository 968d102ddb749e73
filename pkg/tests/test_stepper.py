import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from twolayer.equilibrium import PressureLaw
from twolayer.errors import DomainError, UnsupportedOrder
from twolayer.fields import VolumeField
from twolayer.stepper import (advance_time_step, build_model_state, check_compatibility, compatibility_data,
                              initial_fields, integrate, prepare_initial_data, pressure_remainder,
                              project_velocity)
from twolayer.verify import small_model


@pytest.fixture(scope="module")
def model():
    return small_model()


def test_equilibrium_is_a_fixed_point(model):
    s, chain = build_model_state(model, "equilibrium")
    assert check_compatibility(chain, model)["max"] == 0.0
    s, rej = integrate(model, s, 0.05, 0.2)
    assert not rej
    assert np.max(np.abs(s.u.plus)) == 0.0 and np.max(np.abs(s.q.plus)) == 0.0
    assert np.max(np.abs(s.eta)) == 0.0


def test_small_data_balances_tractions_at_rest(model):
    _, chain = build_model_state(model, "small_data")
    rep = check_compatibility(chain, model)
    assert max(rep[k] for k in ("traction_top_0", "traction_interface_0", "jump_0", "bottom_0")) <= 1e-12
    assert chain.J_max == 2


def test_orders_above_two_unsupported(model):
    u, q, eta = initial_fields(model, "equilibrium")
    with pytest.raises(UnsupportedOrder):
        compatibility_data(model, u, q, eta, J_max=3)


def test_non_finite_data_rejected(model):
    u, q, eta = initial_fields(model, "equilibrium")
    eta = eta.copy()
    eta[0, 0, 0] = np.nan
    with pytest.raises(DomainError):
        prepare_initial_data(model, u, q, eta)


def test_unknown_preset(model):
    with pytest.raises(ValueError):
        initial_fields(model, "tsunami")


def test_isothermal_remainder_vanishes():
    law = PressureLaw.isothermal(1.0)
    assert np.all(pressure_remainder(law, 1.0, np.array([0.5, 2.0])) == 0.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(-0.4, 0.4), st.floats(1.1, 2.5))
def test_polytropic_remainder_against_quadrature(base, rel, gamma):
    law = PressureLaw.polytropic(1.3, gamma)
    rho = base * (1 + rel)
    ref = quad(lambda z: (rho - z) * 1.3 * gamma * (gamma - 1) * z ** (gamma - 2), base, rho,
               epsabs=0.0, epsrel=1e-13)[0]
    got = float(pressure_remainder(law, base, np.array([rho]))[0])
    assert got == pytest.approx(ref, rel=1e-10, abs=1e-15)


def test_remainder_is_second_order_in_the_gap():
    law = PressureLaw.polytropic(1.0, 1.4)
    r = [float(pressure_remainder(law, 1.0, np.array([1.0 + h]))[0]) for h in (1e-2, 5e-3)]
    assert r[0] / r[1] == pytest.approx(4.0, rel=1e-2)


def test_projection_enforces_constraints(model):
    rng = np.random.default_rng(0)
    shp = (3, *model.torus.shape)
    u = VolumeField(model.torus, model.slab, rng.normal(size=(*shp, model.slab.nz_plus)),
                    rng.normal(size=(*shp, model.slab.nz_minus)))
    p = project_velocity(u)
    assert np.all(p.minus[..., 0] == 0.0)
    assert np.array_equal(p.plus[..., 0], p.minus[..., -1])
    assert project_velocity(p) == p or np.array_equal(project_velocity(p).plus, p.plus)


def test_small_step_contracts_and_keeps_invariants(model):
    s, _ = build_model_state(model, "small_data")
    s1 = advance_time_step(model, s, 0.01, tol=1e-12)
    rec = s1.record
    assert max(rec["ratios"][1:], default=0.0) < 0.5
    lo, hi = model.rho_bounds
    m = rec["margins"]
    assert lo <= m["rho_min"] and m["rho_max"] <= hi and m["min_J"] > model.jacobian_floor
    assert s1.t == pytest.approx(0.01)


def test_nonpositive_step_rejected(model):
    s, _ = build_model_state(model, "equilibrium")
    with pytest.raises(ValueError):
        advance_time_step(model, s, 0.0)
