"""`sim` command line: a thin client of the HTTP service.

By default requests go to the app in-process; `--server URL` sends them to a
running service instead.  Exit codes: 0 clean, 2 validation, 3 runtime abort.
"""
import json
import sys
import warnings
from pathlib import Path

import click

from .errors import EXIT_CLEAN, EXIT_RUNTIME, EXIT_VALIDATION
from .verify import SUITES


class _Client:
    def __init__(self, server=None, timeout=None):
        if server:
            import httpx
            self.http = httpx.Client(base_url=server, timeout=timeout)
        else:
            with warnings.catch_warnings():
                warnings.filterwarnings("ignore", message=".*httpx.*")
                from fastapi.testclient import TestClient
            from .service import app
            self.http = TestClient(app, raise_server_exceptions=False)

    def post(self, path, payload=None):
        return self.http.post(path, json=payload)


def _config_payload(path):
    p = Path(path)
    if not p.is_file():
        click.echo(f"error: config file not found: {p}", err=True)
        sys.exit(EXIT_VALIDATION)
    return dict(config_text=p.read_text(), source=str(p))


def _check(resp):
    """Map HTTP failures to exit codes; return the JSON body on success."""
    if resp.status_code == 200:
        return resp.json()
    try:
        body = resp.json()
    except ValueError:
        body = {"message": resp.text}
    if resp.status_code in (404, 422):
        msg = body.get("message") or body.get("detail")
        click.echo(f"error: {body.get('kind', 'ValidationError')}: {msg}", err=True)
        sys.exit(EXIT_VALIDATION)
    click.echo(f"error: {body.get('kind', 'RuntimeError')}: {body.get('message', body)}", err=True)
    sys.exit(EXIT_RUNTIME)


@click.group()
@click.option("--server", default=None, help="Base URL of a running service (default: in-process).")
@click.option("--timeout", default=None, type=float, help="HTTP timeout in seconds when using --server.")
@click.pass_context
def main(ctx, server, timeout):
    """Two-layer free-boundary flow simulator."""
    ctx.obj = _Client(server, timeout)


@main.command()
@click.argument("config", type=click.Path())
@click.option("--out", "out_dir", default=None, help="Output directory (overrides io.out_dir).")
@click.option("--json", "as_json", is_flag=True, help="Print the full report as JSON.")
@click.pass_obj
def run(client, config, out_dir, as_json):
    """Run a simulation from CONFIG."""
    payload = _config_payload(config)
    payload["out_dir"] = out_dir
    rep = _check(client.post("/run", payload))
    for line in rep["header"]:
        if line.endswith("# default"):
            click.echo(line)
    if as_json:
        click.echo(json.dumps(rep, indent=2))
    else:
        fin = rep.get("final") or {}
        click.echo(f"status={rep['status']} steps={rep['steps']} t={rep['t']:.6g} out={rep['out_dir']}")
        if rep["status"] == "clean":
            click.echo(f"mass_drift={rep['mass_drift']:.3e} max_contraction_ratio={rep['max_contraction_ratio']} "
                       f"E_u={fin.get('E_u')} E_q={fin.get('E_q')} E_eta={fin.get('E_eta_sigma')}")
        for r in rep["rejections"]:
            click.echo(f"rejected step {r['step']} at t={r['t']:.6g} dt={r['dt']:.3g}: {r['error']}")
    if rep["status"] != "clean":
        click.echo(f"abort: {rep['error']}: {rep['message']}", err=True)
    sys.exit(rep["exit_code"])


@main.command()
@click.argument("suite")
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def verify(client, suite, as_json):
    """Run a verification SUITE and print a pass/fail table."""
    if suite not in SUITES:
        raise click.UsageError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    rep = _check(client.post(f"/verify/{suite}"))
    if as_json:
        click.echo(json.dumps(rep, indent=2))
    else:
        click.echo("suite\tcheck\tvalue\trelation\tthreshold\tstatus")
        for r in rep["rows"]:
            v = "nan" if r["value"] is None else f"{r['value']:.6g}"
            click.echo(f"{r['suite']}\t{r['check']}\t{v}\t{r['relation']}\t{r['threshold']}\t"
                       f"{'PASS' if r['passed'] else 'FAIL'}")
    sys.exit(EXIT_CLEAN if rep["passed"] else EXIT_RUNTIME)


@main.command()
@click.argument("config", type=click.Path())
@click.option("--out", "out_dir", default=None)
@click.option("--nz", default=129, show_default=True, help="Vertical nodes per layer for the profile.")
@click.pass_obj
def equilibrium(client, config, out_dir, nz):
    """Solve the equilibrium profile only and dump it as CSV."""
    payload = _config_payload(config)
    payload.update(out_dir=out_dir, nz=nz)
    rep = _check(client.post("/equilibrium", payload))
    click.echo(json.dumps(rep, indent=2))


@main.command("kappa-ladder")
@click.argument("config", type=click.Path())
@click.option("--kappas", required=True, help="Comma-separated list, e.g. 0.1,0.05,0.025")
@click.option("--t-end", default=None, type=float)
@click.pass_obj
def kappa_ladder_cmd(client, config, kappas, t_end):
    """Deviation of the regularized surface from the kinematic one per kappa."""
    try:
        ks = [float(k) for k in kappas.replace(" ", ",").split(",") if k]
    except ValueError:
        raise click.UsageError("--kappas must be numbers") from None
    payload = _config_payload(config)
    payload.update(kappas=ks, t_end=t_end)
    rep = _check(client.post("/kappa-ladder", payload))
    click.echo("kappa\tdeviation\torder")
    for i, (k, d) in enumerate(zip(rep["kappas"], rep["deviations"])):
        o = rep["orders"][i - 1] if i else None
        click.echo(f"{k:g}\t{d:.6e}\t{'' if o is None else f'{o:.4f}'}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Start the HTTP service (needs uvicorn)."""
    try:
        import uvicorn
    except ImportError:
        click.echo("error: uvicorn is not installed (pip install 'artifact[serve]')", err=True)
        sys.exit(EXIT_VALIDATION)
    uvicorn.run("twolayer.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
