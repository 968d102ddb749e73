"""Run orchestration: config -> model -> stepping loop with diagnostics."""
import copy
import logging
import time
from collections import deque
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import RunConfig, header_lines, serialize
from .diagnostics import DiagnosticsWriter, energy_functionals, energy_identity_residual, mass_total
from .equilibrium import solve_equilibrium
from .errors import EXIT_CLEAN, EXIT_RUNTIME, SimulationError
from .fields import SlabSpec, TorusSpec
from .geometry import ThetaMap, default_lambdas
from .io import load_snapshot, save_snapshot, write_json
from .lame import LameParams
from .stepper import (Model, build_model_state, compatibility_data, integrate, prepare_initial_data)
from .surface import build_xi_corrector, kappa_ladder as _kappa_ladder

log = logging.getLogger("twolayer")


def build_equilibrium(cfg: RunConfig, nz_plus=None, nz_minus=None):
    lp, lm = cfg.laws()
    gr, ph = cfg.grid, cfg.phys
    return solve_equilibrium(lp, lm, ph.g, ph.p_atm, gr.ell, gr.b,
                             nz_plus or gr.nz_plus, nz_minus or gr.nz_minus)


def build_model(cfg: RunConfig):
    gr, ph = cfg.grid, cfg.phys
    torus = TorusSpec(gr.L1, gr.L2, gr.n1, gr.n2)
    slab = SlabSpec(gr.ell, gr.b, gr.nz_plus, gr.nz_minus)
    eq = build_equilibrium(cfg)
    lame = LameParams(ph.mu_plus, ph.mu_minus, ph.mup_plus, ph.mup_minus, cfg.lame.cg_tol, cfg.lame.cg_maxit)
    bounds = None
    if ph.rho_lower is not None or ph.rho_upper is not None:
        lo = ph.rho_lower if ph.rho_lower is not None else min(float(eq.rho_bar_minus.min()), float(eq.rho_bar_plus.min()))
        hi = ph.rho_upper if ph.rho_upper is not None else max(float(eq.rho_bar_minus.max()), float(eq.rho_bar_plus.max()))
        bounds = (0.5 * lo, 1.5 * hi)
    return Model(torus, slab, eq, lame=lame, sigma_plus=ph.sigma_plus, sigma_minus=ph.sigma_minus,
                 kappa=cfg.surface.kappa, use_kappa=cfg.surface.use_kappa, cfl_max=cfg.surface.cfl_max,
                 rho_bounds=bounds, jacobian_floor=cfg.geometry.jacobian_floor, delta=cfg.model.delta,
                 N=cfg.model.N, geometry_refreshes=cfg.step.geometry_refreshes,
                 transport_scheme=cfg.transport.scheme, transport_eps=cfg.transport.eps,
                 thetamap=ThetaMap(torus, slab, lambdas=default_lambdas(cfg.geometry.match_order)))


def initial_state(cfg: RunConfig, model):
    if cfg.init.preset != "snapshot":
        return build_model_state(model, cfg.init.preset, cfg.init.amplitude)
    u0, q0, eta0, _ = load_snapshot(cfg.init.snapshot, model.torus, model.slab)
    state = prepare_initial_data(model, u0, q0, eta0)
    chain = compatibility_data(model, state.u, state.q, state.eta)
    if model.use_kappa:
        model.xi = build_xi_corrector(model.torus, chain.eta, jmax=chain.J_max)
    return state, chain


class RunObserver:
    """Per-step diagnostics: CSV row, snapshots, running extrema."""

    def __init__(self, model, cfg, out_dir, state0, chain, writer):
        self.model, self.cfg, self.out = model, cfg, Path(out_dir)
        self.history = deque([(state0.t, state0.u, state0.q, np.asarray(state0.eta))], maxlen=3)
        self.chain = chain
        self.writer = writer
        self.m0 = mass_total(state0)
        self.max_ratio = 0.0
        self.max_residual = 0.0
        self.last = None
        self.sigma = (model.sigma_plus, model.sigma_minus)

    def functionals(self):
        order = min(2 * self.model.N, len(self.history) - 1)
        return energy_functionals(list(self.history), self.model.torus, self.sigma, self.model.N,
                                  chain=self.chain, max_order=order)

    def __call__(self, step, state):
        self.history.append((state.t, state.u, state.q, np.asarray(state.eta)))
        rec = state.record
        rep = self.functionals()
        mass = mass_total(state)
        ratios = [r for r in rec["ratios"][1:] if np.isfinite(r)]
        ratio = max(ratios) if ratios else float("nan")
        if ratios:
            self.max_ratio = max(self.max_ratio, ratio)
        res = energy_identity_residual(rec, state, self.model)
        self.max_residual = max(self.max_residual, res)
        m = rec["margins"]
        row = dict(step=step, t=state.t, dt=rec["dt"], mass=mass, mass_drift=(mass - self.m0) / self.m0,
                   energy_residual=res, picard_iterations=rec["iterations"], contraction_ratio=ratio,
                   rho_min=m["rho_min"], rho_max=m["rho_max"], min_J=m["min_J"])
        row.update(rep.as_row())
        self.writer.write(row)
        self.last = row
        every = self.cfg.io.snap_every
        if every and step % every == 0:
            save_snapshot(self.out, step, state)


def run_simulation(cfg: RunConfig, defaulted=(), out_dir=None, echo=print):
    """Build, step to t_end, write outputs.  Returns the exit report (dict)."""
    out = Path(out_dir or cfg.io.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = header_lines(cfg, defaulted)
    (out / "config.txt").write_text(serialize(cfg))
    (out / "header.txt").write_text("\n".join(header) + "\n")
    for line in header:
        if line.endswith("# default"):
            echo(line)
    t0 = time.perf_counter()
    report = dict(status="clean", exit_code=EXIT_CLEAN, out_dir=str(out), steps=0, t=0.0, rejections=[])
    with threadpool_limits(cfg.io.threads):
        np.random.seed(cfg.io.seed)
        model = None
        state = None
        try:
            model = build_model(cfg)
            state, chain = initial_state(cfg, model)
            report["initial"] = dict(traction_residual=state.record["traction_residual"],
                                     smallness=model.smallness(state.eta), J_max=chain.J_max)
            save_snapshot(out, 0, state)
            with DiagnosticsWriter(out / "diagnostics.csv") as writer:
                obs = RunObserver(model, cfg, out, state, chain, writer)
                st = cfg.step
                state, rej = integrate(model, state, st.dt, st.t_end, st.max_picard, st.picard_tol,
                                       st.reject_retries, on_commit=obs)
            report["rejections"] = rej
            report["steps"] = obs.last["step"] if obs.last else 0
            report["t"] = state.t
            report["final"] = obs.last or {}
            report["max_contraction_ratio"] = obs.max_ratio
            report["max_energy_residual"] = obs.max_residual
            report["mass_drift"] = (mass_total(state) - obs.m0) / obs.m0
            save_snapshot(out, report["steps"], state, name="final")
        except SimulationError as exc:
            report.update(status="aborted", exit_code=EXIT_RUNTIME, error=exc.kind, message=str(exc),
                          context={k: v for k, v in exc.context.items() if np.isscalar(v)})
            post = getattr(exc, "state", None) or state
            if post is not None:
                save_snapshot(out, exc.context.get("step", 0), post, name="postmortem",
                              meta=dict(error=exc.kind, message=str(exc)))
    report["wall_time"] = time.perf_counter() - t0
    write_json(out / "report.json", report)
    return report


def run_equilibrium(cfg: RunConfig, out_dir=None, nz=129):
    """Profile only: solve, dump CSV, return residuals."""
    eq = build_equilibrium(cfg, nz, nz)
    out = Path(out_dir or cfg.io.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    eq.to_csv(out / "equilibrium.csv")
    hyd = eq.hydrostatic_residual()
    mat = eq.matching_residuals()
    return dict(csv=str(out / "equilibrium.csv"), rho1=float(eq.rho1), jump=float(eq.jump),
                hydrostatic_residual=hyd, matching_residuals=mat)


def kappa_ladder(cfg: RunConfig, kappas, t_end=None):
    """Surface deviation of the kappa problem from the kinematic run."""
    t_end = cfg.step.t_end if t_end is None else t_end

    def run(k):
        c = copy.deepcopy(cfg)
        c.surface.kappa = float(k)
        c.surface.use_kappa = k > 0
        with threadpool_limits(cfg.io.threads):
            model = build_model(c)
            state, _ = initial_state(c, model)
            traj = [(state.t, np.asarray(state.eta))]
            integrate(model, state, c.step.dt, t_end, c.step.max_picard, c.step.picard_tol,
                      c.step.reject_retries, on_commit=lambda n, s: traj.append((s.t, np.asarray(s.eta))))
        return traj

    torus = TorusSpec(cfg.grid.L1, cfg.grid.L2, cfg.grid.n1, cfg.grid.n2)
    return _kappa_ladder(run, sorted((float(k) for k in kappas), reverse=True), torus)
