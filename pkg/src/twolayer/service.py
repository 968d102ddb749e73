"""HTTP service around the simulator.  The CLI talks to this app either
in-process or over the network."""
import math
from typing import Any, Dict, List, Optional, Union

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .config import RunConfig, build_config, header_lines, parse_text
from .errors import ConfigError, SimulationError
from .runner import kappa_ladder, run_equilibrium, run_simulation
from .verify import SUITES, run_suite


class ConfigPayload(BaseModel):
    """Either the flat config text or a {section: {key: value}} mapping."""
    config_text: Optional[str] = None
    config: Optional[Dict[str, Dict[str, Any]]] = None
    source: str = "<request>"

    def resolve(self):
        if (self.config_text is None) == (self.config is None):
            raise ConfigError("send exactly one of config_text or config")
        if self.config_text is not None:
            return parse_text(self.config_text, source=self.source)
        return build_config(self.config)


class RunRequest(ConfigPayload):
    out_dir: Optional[str] = None


class RunResponse(BaseModel):
    status: str
    exit_code: int
    out_dir: str
    steps: int = 0
    t: float = 0.0
    defaulted: List[str] = Field(default_factory=list)
    header: List[str] = Field(default_factory=list)
    rejections: List[Dict[str, Any]] = Field(default_factory=list)
    initial: Dict[str, Any] = Field(default_factory=dict)
    final: Dict[str, Any] = Field(default_factory=dict)
    mass_drift: Optional[float] = None
    max_contraction_ratio: Optional[float] = None
    max_energy_residual: Optional[float] = None
    error: Optional[str] = None
    message: Optional[str] = None
    context: Dict[str, Any] = Field(default_factory=dict)
    wall_time: float = 0.0


class EquilibriumRequest(ConfigPayload):
    out_dir: Optional[str] = None
    nz: int = Field(129, ge=6)


class EquilibriumResponse(BaseModel):
    csv: str
    rho1: float
    jump: float
    hydrostatic_residual: float
    matching_residuals: List[float]


class LadderRequest(ConfigPayload):
    kappas: List[float] = Field(min_length=2)
    t_end: Optional[float] = Field(None, gt=0)


class LadderResponse(BaseModel):
    kappas: List[float]
    deviations: List[float]
    orders: List[Optional[float]]
    min_order: Optional[float]


class VerifyRow(BaseModel):
    suite: str
    check: str
    value: Optional[float]
    threshold: Union[float, List[float]]
    relation: str
    passed: bool


class VerifyResponse(BaseModel):
    suite: str
    passed: bool
    rows: List[VerifyRow]
    wall_time: float


class ErrorResponse(BaseModel):
    kind: str
    message: str
    key: Optional[str] = None
    line: Optional[int] = None


def _finite(x):
    """JSON has no NaN/inf: map them to None, recursively."""
    if isinstance(x, float):
        return x if math.isfinite(x) else None
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if hasattr(x, "item"):
        return _finite(x.item())
    return x


app = FastAPI(title="twolayer", version=__version__)


@app.exception_handler(ConfigError)
async def _config_error(request: Request, exc: ConfigError):
    body = ErrorResponse(kind=exc.kind, message=str(exc), key=getattr(exc, "key", None),
                         line=getattr(exc, "line", None))
    return JSONResponse(status_code=422, content=body.model_dump())


@app.exception_handler(SimulationError)
async def _sim_error(request: Request, exc: SimulationError):
    body = ErrorResponse(kind=exc.kind, message=str(exc))
    return JSONResponse(status_code=500, content=body.model_dump())


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.get("/suites")
def suites():
    return {"suites": list(SUITES)}


@app.post("/config/validate")
def validate(req: ConfigPayload):
    cfg, defaulted = req.resolve()
    return {"config": cfg.model_dump(), "defaulted": defaulted, "header": header_lines(cfg, defaulted)}


@app.post("/run", response_model=RunResponse)
def run(req: RunRequest):
    cfg, defaulted = req.resolve()
    rep = run_simulation(cfg, defaulted, out_dir=req.out_dir, echo=lambda s: None)
    rep = _finite(rep)
    rep["defaulted"] = defaulted
    rep["header"] = header_lines(cfg, defaulted)
    rep["rejections"] = [{k: v for k, v in r.items()} for r in rep.get("rejections", [])]
    return RunResponse(**{k: v for k, v in rep.items() if k in RunResponse.model_fields})


@app.post("/equilibrium", response_model=EquilibriumResponse)
def equilibrium(req: EquilibriumRequest):
    cfg, _ = req.resolve()
    rep = run_equilibrium(cfg, out_dir=req.out_dir, nz=req.nz)
    return EquilibriumResponse(**_finite(rep))


@app.post("/kappa-ladder", response_model=LadderResponse)
def ladder(req: LadderRequest):
    cfg, _ = req.resolve()
    if any(k <= 0 for k in req.kappas):
        raise ConfigError("kappas must be positive")
    rep = kappa_ladder(cfg, req.kappas, req.t_end)
    orders = _finite(rep.orders)
    finite = [o for o in orders if o is not None]
    return LadderResponse(kappas=rep.kappas, deviations=rep.deviations, orders=orders,
                          min_order=min(finite) if finite else None)


@app.post("/verify/{suite}", response_model=VerifyResponse)
def verify(suite: str):
    if suite not in SUITES:
        raise HTTPException(status_code=404, detail=f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    return VerifyResponse(**_finite(run_suite(suite)))
