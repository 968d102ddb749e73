import json
import warnings

import pytest
from click.testing import CliRunner

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient

from twolayer.cli import main
from twolayer.service import app

QUICK = "grid.n1 = 8\ngrid.n2 = 8\ngrid.nz_plus = 9\ngrid.nz_minus = 9\nstep.t_end = 0.02\nio.snap_every = 1\n"


@pytest.fixture(scope="module")
def client():
    return TestClient(app, raise_server_exceptions=False)


def test_health_and_suites(client):
    assert client.get("/health").status_code == 200
    assert "lame" in client.get("/suites").json()["suites"]


def test_validate_endpoint(client):
    ok = client.post("/config/validate", json={"config_text": QUICK})
    assert ok.status_code == 200
    bad = client.post("/config/validate", json={"config_text": "phys.mu_plus = 0\n"})
    assert bad.status_code == 422 and bad.json()["key"] == "phys.mu_plus"


def test_unknown_suite_is_404(client):
    assert client.post("/verify/nonsense").status_code == 404


def test_equilibrium_endpoint(client, tmp_path):
    r = client.post("/equilibrium", json={"config_text": QUICK, "out_dir": str(tmp_path), "nz": 33})
    assert r.status_code == 200
    body = r.json()
    assert body["jump"] < 0 and (tmp_path / "equilibrium.csv").exists()


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_cli_run_clean_and_replay(tmp_path):
    runner = CliRunner()
    cfg = _write(tmp_path, QUICK)
    outs = []
    for k in range(2):
        out = tmp_path / f"out{k}"
        res = runner.invoke(main, ["run", cfg, "--out", str(out)])
        assert res.exit_code == 0, res.output
        outs.append((out / "diagnostics.csv").read_text())
    assert "# default" in res.output
    assert outs[0] == outs[1]
    rep = json.loads((tmp_path / "out0" / "report.json").read_text())
    assert rep["status"] == "clean" and rep["steps"] == 2
    assert list((tmp_path / "out0").glob("snap_*.npz"))


def test_cli_validation_exit_code(tmp_path):
    res = CliRunner().invoke(main, ["run", _write(tmp_path, "phys.mu_plus = 0\n")])
    assert res.exit_code == 2
    res = CliRunner().invoke(main, ["run", str(tmp_path / "missing.cfg")])
    assert res.exit_code == 2


def test_cli_runtime_abort_exit_code(tmp_path):
    cfg = _write(tmp_path, QUICK + "init.preset = huge_eta\n")
    res = CliRunner().invoke(main, ["run", cfg, "--out", str(tmp_path / "o")])
    assert res.exit_code == 3


def test_cli_unknown_suite(tmp_path):
    assert CliRunner().invoke(main, ["verify", "nonsense"]).exit_code == 2


def test_cli_kappa_ladder_bad_list(tmp_path):
    res = CliRunner().invoke(main, ["kappa-ladder", _write(tmp_path, QUICK), "--kappas", "a,b"])
    assert res.exit_code == 2


def test_cli_verify_equilibrium():
    res = CliRunner().invoke(main, ["verify", "equilibrium"])
    assert res.exit_code == 0 and "PASS" in res.output and "FAIL" not in res.output
