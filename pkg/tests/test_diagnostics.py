import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twolayer.diagnostics import (CSV_FIELDS, DiagnosticsWriter, backward_derivatives, dual_norm_Hstar,
                                  energy_functionals, horizontal_sum_sq, mass_total, sobolev_norm)
from twolayer.errors import InsufficientHistory
from twolayer.fields import SlabSpec, TorusSpec, VolumeField
from twolayer.norms import volume_norm_sq
from twolayer.stepper import build_model_state
from twolayer.verify import small_model

TORUS = TorusSpec(1.0, 1.0, 8, 8)
X1, X2 = TORUS.grid()


def column(profile, slab):
    return VolumeField(TORUS, slab, np.cos(X1)[..., None] * profile(slab.z("plus")),
                       np.cos(X1)[..., None] * profile(slab.z("minus")))


@pytest.mark.parametrize("s", [0, 1, 2, 3, 4, 5])
def test_surface_norm_of_single_mode(s):
    # cos x1 has two modes of weight pi^2 each and <xi>^2 = 2
    assert sobolev_norm(np.cos(X1), s, TORUS) ** 2 == pytest.approx(2 * np.pi**2 * 2**s, rel=1e-12)


def test_volume_l2_exact_for_linear_profile():
    slab = SlabSpec(1.0, 1.0, 9, 9)
    assert volume_norm_sq(column(lambda z: z, slab), 0) == pytest.approx(4 * np.pi**2 / 3, rel=1e-12)


def test_volume_l2_quadratic_profile_converges():
    errs = []
    for nz in (9, 17, 33):
        f = column(lambda z: z**2, SlabSpec(1.0, 1.0, nz, nz))
        errs.append(abs(volume_norm_sq(f, 0) / (4 * np.pi**2 / 5) - 1))
    assert errs[2] < errs[1] < errs[0] and errs[2] <= 1e-5
    assert math.log2(errs[1] / errs[2]) >= 3.5


def _random_field(rng, slab, scale=1.0):
    # band-limited in the horizontal, smooth in z
    c = rng.normal(size=4)
    prof = lambda z: c[0] + c[1] * z + c[2] * np.sin(2 * z) + c[3] * z**3
    g = np.cos(X1 + c[0]) * np.sin(2 * X2) + 0.5 * np.cos(X2)
    return VolumeField(TORUS, slab, scale * g[..., None] * prof(slab.z("plus")),
                       scale * g[..., None] * prof(slab.z("minus")))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_horizontal_sum_bounded_by_full_norm(seed):
    slab = SlabSpec(1.0, 1.0, 9, 9)
    u = _random_field(np.random.default_rng(seed), slab)
    # three horizontal derivatives in L2-based order 2 never exceed the order 5 norm
    assert horizontal_sum_sq(u, 3, 2) <= volume_norm_sq(u, 5) * (1 + 1e-12)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_dual_norm_below_l2(seed):
    slab = SlabSpec(1.0, 1.0, 9, 9)
    rng = np.random.default_rng(seed)
    F = VolumeField(TORUS, slab, *(np.stack([_random_field(rng, slab).layer(l)] * 3) for l in ("plus", "minus")))
    assert dual_norm_Hstar(F) <= math.sqrt(volume_norm_sq(F, 0)) * (1 + 1e-9)


def test_backward_derivatives_exact_on_quadratics():
    t = np.array([0.0, 0.3, 0.5])
    vals = [2 + 3 * x - 4 * x**2 for x in t]
    d = backward_derivatives(vals, t, 2)
    assert d[0] == pytest.approx(2 + 1.5 - 1.0)
    assert d[1] == pytest.approx(3 - 8 * 0.5)
    assert d[2] == pytest.approx(-8.0)


@pytest.fixture(scope="module")
def model_state():
    m = small_model()
    s, chain = build_model_state(m, "small_data")
    return m, s, chain


def test_functionals_need_history(model_state):
    m, s, _ = model_state
    with pytest.raises(InsufficientHistory):
        energy_functionals([(0.0, s.u, s.q, s.eta)], m.torus, 0.1)


def test_functionals_weak_dissipation_bounded(model_state):
    m, s, chain = model_state
    hist = [(0.0, s.u, s.q, s.eta), (0.01, s.u, s.q, s.eta * 1.01), (0.02, s.u, s.q, s.eta * 1.02)]
    rep = energy_functionals(hist, m.torus, [0.1, 0.1], chain=chain)
    assert rep.D_u_weak <= 2 * rep.D_u + 1e-300
    assert rep.L_eta > 0 and rep.TE > 0
    assert all(a.startswith(("D_q", "D_eta")) for a in rep.absent)
    assert set(rep.as_row()) >= {"E_u", "E_q", "L_eta"}


def test_mass_matches_equilibrium_profile():
    m = small_model()
    s, _ = build_model_state(m, "equilibrium")
    area = (2 * np.pi) ** 2 * m.torus.L1 * m.torus.L2
    assert mass_total(s) == pytest.approx(m.eq.total_mass(area), rel=1e-12)


def test_writer_round_trips_floats(tmp_path):
    row = {k: 0.1 * i for i, k in enumerate(CSV_FIELDS)}
    with DiagnosticsWriter(tmp_path / "d.csv") as w:
        w.write(row)
    with open(tmp_path / "d.csv") as fh:
        back = next(csv.DictReader(fh))
    assert all(float(back[k]) == row[k] for k in CSV_FIELDS)
