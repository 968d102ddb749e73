import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twolayer.equilibrium import PressureLaw, solve_equilibrium
from twolayer.errors import ValidationError
from twolayer.verify import isothermal_closed_form


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(0.4, 2.0), st.floats(0.5, 2.0))
def test_isothermal_closed_form(cp, cm, g):
    eq = solve_equilibrium(PressureLaw.isothermal(cp), PressureLaw.isothermal(cm), g, 1.0, 1.0, 1.0, 129, 129)
    rp, rm, p_star = isothermal_closed_form(cp, cm, g, 1.0, 1.0, 1.0, eq.z["plus"], eq.z["minus"])
    scale = max(rp.max(), rm.max())
    assert np.max(np.abs(eq.rho_bar_plus - rp)) <= 1e-8 * scale
    assert np.max(np.abs(eq.rho_bar_minus - rm)) <= 1e-8 * scale
    assert max(eq.matching_residuals()) <= 1e-10 * max(1.0, p_star)


def test_density_jump_from_pressure_matching():
    cp, cm = 1.0, math.sqrt(0.5)
    eq = solve_equilibrium(PressureLaw.isothermal(cp), PressureLaw.isothermal(cm), 1.0, 1.0, 1.0, 1.0)
    p_star = math.exp(1.0)           # p_atm e^{g ell / c+^2}
    assert eq.jump == pytest.approx(p_star * (1 / cp**2 - 1 / cm**2), rel=1e-9)
    assert eq.jump < 0               # heavier fluid below


def test_equal_laws_have_no_jump():
    law = PressureLaw.polytropic(1.3, 1.4)
    eq = solve_equilibrium(law, law, 1.0, 1.0, 1.0, 1.0)
    assert abs(eq.jump) <= 1e-13


def test_enthalpy_derivative_matches_quadrature():
    law = PressureLaw.polytropic(1.0, 1.4)
    eq = solve_equilibrium(law, law, 1.0, 1.0, 1.0, 1.0)
    r, h = 1.1 * eq.rho1, 1e-4
    num = (eq.enthalpy("plus", r + h) - eq.enthalpy("plus", r - h)) / (2 * h)
    assert num == pytest.approx(float(eq.enthalpy_derivative("plus", r)), rel=1e-7)


@pytest.mark.parametrize("text", ["adiabatic(1)", "isothermal()", "polytropic(1)", "isothermal(-1)",
                                  "polytropic(1, 0.5)"])
def test_bad_laws(text):
    with pytest.raises(ValidationError):
        PressureLaw.parse(text)


def test_law_roundtrip():
    for law in (PressureLaw.isothermal(0.7), PressureLaw.polytropic(2.0, 1.4)):
        assert PressureLaw.parse(str(law)) == law


def test_nonpositive_constants_rejected():
    law = PressureLaw.isothermal(1.0)
    with pytest.raises(ValidationError):
        solve_equilibrium(law, law, 0.0, 1.0, 1.0, 1.0)
