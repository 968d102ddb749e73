import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twolayer.fields import SlabSpec, TorusSpec, VolumeField
from twolayer.norms import volume_norm
from twolayer.transport import History, TransportCoefficients, solve_transport, trace_characteristics, transport_preset
from twolayer.verify import observed_order, transport_gronwall, transport_ladder

TORUS = TorusSpec(1.0, 1.0, 8, 8)
SLAB = SlabSpec(1.0, 1.0, 9, 9)


@pytest.mark.parametrize("preset", ["decay", "source"])
def test_static_coefficients_are_exact(preset):
    # no motion: the characteristic stays on the node and the time integral is exact
    q0, hist, exact = transport_preset(preset, TORUS, SLAB, t_end=1.0, nsteps=10)
    err = solve_transport(q0, hist) - exact
    assert volume_norm(err, 0) <= 1e-12 * volume_norm(exact, 0)


def test_zero_velocity_characteristics_stand_still():
    _, hist, _ = transport_preset("decay", TORUS, SLAB, nsteps=5)
    x = (np.array([0.1, 3.0]), np.array([2.0, 5.5]), np.array([0.25, 0.75]))
    back = trace_characteristics(hist, x, "plus")
    for a, b in zip(back, x):
        assert np.allclose(a, b, atol=1e-14)


def test_advection_grid_shift():
    # U * t_end equal to one grid spacing: the foot points land on nodes
    h = 2 * np.pi / TORUS.n1
    q0, hist, exact = transport_preset("advection", TORUS, SLAB, t_end=1.0, nsteps=4, U=h)
    assert volume_norm(solve_transport(q0, hist) - exact, 0) <= 1e-10


def test_cross_oracle_gap_shrinks():
    gaps = transport_ladder("decay")
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert observed_order(gaps).min() > 0.5


def test_gronwall_constant_finite():
    rep = transport_gronwall("source", n=8, nz=9, ns=8)
    assert rep["valid"] and rep["C"] < 1e3


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.05, 1.0))
def test_linearity_in_source(c0, scale):
    q0, hist, _ = transport_preset("decay", TORUS, SLAB, nsteps=4, c0=c0)
    a = solve_transport(q0, hist)
    b = solve_transport(q0 * scale, hist)
    assert volume_norm(b - a * scale, 0) <= 1e-12 * volume_norm(a, 0)


def test_positive_data_stays_positive_under_decay():
    q0, hist, _ = transport_preset("decay", TORUS, SLAB, nsteps=6, c0=1.0)
    q = solve_transport(q0, hist)
    assert q.plus.min() >= 0 or q0.plus.min() < 0
