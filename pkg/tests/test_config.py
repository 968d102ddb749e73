import pytest
from hypothesis import given, settings, strategies as st

from twolayer.config import all_keys, header_lines, parse_config, parse_text, serialize
from twolayer.errors import ConfigError, ParseError, ValidationError


def test_empty_text_gives_defaults():
    cfg, defaulted = parse_text("")
    assert set(defaulted) == set(all_keys())
    assert cfg.grid.n1 == 16 and cfg.init.preset == "small_data"


def test_minimal_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# short run\ngrid.n1 = 8\nstep.t_end = 0.05   # trailing comment\n")
    cfg, defaulted = parse_config(p)
    assert cfg.grid.n1 == 8 and cfg.step.t_end == 0.05
    assert "grid.n1" not in defaulted and "grid.n2" in defaulted


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        parse_config(tmp_path / "nope.cfg")


def test_zero_viscosity_rejected():
    with pytest.raises(ValidationError) as exc:
        parse_text("phys.mu_plus = 0\n")
    assert "mu > 0" in str(exc.value)


def test_unknown_key_reports_line():
    with pytest.raises(ParseError) as exc:
        parse_text("grid.n1 = 8\n\ngrid.nx = 3\n")
    assert exc.value.line == 3 and exc.value.key == "grid.nx"


def test_repeated_key():
    with pytest.raises(ParseError) as exc:
        parse_text("grid.n1 = 8\ngrid.n1 = 10\n")
    assert exc.value.line == 2


@pytest.mark.parametrize("text,key", [
    ("grid.n1 = 7\n", "grid.n1"),
    ("grid.nz_plus = 3\n", "grid.nz_plus"),
    ("step.dt = -1\n", "step.dt"),
    ("phys.law_plus = adiabatic(2)\n", "phys.law_plus"),
    ("surface.use_kappa = true\n", "surface.kappa"),
    ("init.preset = snapshot\n", "init.snapshot"),
    ("transport.scheme = spectral\n", "transport.scheme"),
])
def test_invalid_values_name_their_key(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_text(text)
    assert exc.value.key == key


def test_auto_density_bounds():
    cfg, _ = parse_text("phys.rho_lower = auto\n")
    assert cfg.phys.rho_lower is None


def test_header_marks_defaults():
    cfg, d = parse_text("grid.n1 = 8\n")
    lines = header_lines(cfg, d)
    assert "grid.n1 = 8" in lines
    assert any(l.startswith("grid.n2 = 16") and l.endswith("# default") for l in lines)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 16).map(lambda k: 2 * k), dt=st.floats(1e-4, 1.0), kappa=st.floats(0.0, 1.0),
       preset=st.sampled_from(["equilibrium", "small_data", "huge_eta"]), flag=st.booleans())
def test_serialize_round_trip(n, dt, kappa, preset, flag):
    text = (f"grid.n1 = {n}\nstep.dt = {dt!r}\nsurface.kappa = {kappa!r}\ninit.preset = {preset}\n"
            f"surface.use_kappa = {'true' if flag and kappa > 0 else 'false'}\n")
    cfg, _ = parse_text(text)
    again, defaulted = parse_text(serialize(cfg))
    assert again == cfg and defaulted == []


def test_match_order_reaches_the_geometry():
    from twolayer.runner import build_model
    cfg, _ = parse_text("geometry.match_order = 3\ngrid.n1 = 8\ngrid.n2 = 8\n")
    assert len(build_model(cfg).thetamap.lambdas) == 4
