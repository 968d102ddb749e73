"""Run configuration: flat `section.key = value` text <-> pydantic model.

Every key has a default.  Lines are `section.key = value`; `#` starts a
comment; blank lines are ignored.  Unknown keys and repeated keys are errors.
"""
from pathlib import Path
from typing import Literal, Optional

import pydantic
from pydantic import BaseModel, ConfigDict, Field

from .equilibrium import PressureLaw
from .errors import ParseError, ValidationError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class GridConfig(_Section):
    L1: float = Field(1.0, gt=0)
    L2: float = Field(1.0, gt=0)
    n1: int = Field(16, ge=4)
    n2: int = Field(16, ge=4)
    ell: float = Field(1.0, gt=0)
    b: float = Field(1.0, gt=0)
    nz_plus: int = Field(17, ge=6)
    nz_minus: int = Field(17, ge=6)


class PhysConfig(_Section):
    g: float = Field(1.0, gt=0)
    p_atm: float = Field(1.0, gt=0)
    mu_plus: float = 0.5
    mu_minus: float = 0.5
    mup_plus: float = 0.1
    mup_minus: float = 0.1
    sigma_plus: float = Field(0.1, ge=0)
    sigma_minus: float = Field(0.1, ge=0)
    # None: take the bounds from the equilibrium profile
    rho_lower: Optional[float] = Field(None, gt=0)
    rho_upper: Optional[float] = Field(None, gt=0)
    law_plus: str = "isothermal(1.0)"
    law_minus: str = "isothermal(0.7071067811865476)"


class ModelConfig(_Section):
    N: int = Field(1, ge=1)
    delta: float = Field(1.0, gt=0)


class GeometryConfig(_Section):
    jacobian_floor: float = Field(0.1, gt=0)
    # interface extension is C^match_order across the interface
    match_order: int = Field(6, ge=1, le=12)


class LameConfig(_Section):
    cg_tol: float = Field(1e-10, gt=0)
    cg_maxit: int = Field(500, ge=1)


class SurfaceConfig(_Section):
    kappa: float = Field(0.0, ge=0)
    use_kappa: bool = False
    cfl_max: float = Field(0.5, gt=0)


class TransportConfig(_Section):
    scheme: Literal["characteristics", "mollified", "both"] = "characteristics"
    eps: float = Field(0.1, gt=0)


class StepConfig(_Section):
    dt: float = Field(0.01, gt=0)
    t_end: float = Field(0.1, ge=0)
    max_picard: int = Field(25, ge=1)
    picard_tol: float = Field(1e-9, gt=0)
    reject_retries: int = Field(5, ge=0)
    geometry_refreshes: int = Field(1, ge=0)


class InitConfig(_Section):
    preset: Literal["equilibrium", "small_data", "huge_eta", "snapshot"] = "small_data"
    amplitude: Optional[float] = None
    snapshot: Optional[str] = None


class IOConfig(_Section):
    out_dir: str = "run_out"
    snap_every: int = Field(10, ge=0)
    threads: int = Field(1, ge=1)
    seed: int = 0


class RunConfig(_Section):
    grid: GridConfig = Field(default_factory=GridConfig)
    phys: PhysConfig = Field(default_factory=PhysConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    lame: LameConfig = Field(default_factory=LameConfig)
    surface: SurfaceConfig = Field(default_factory=SurfaceConfig)
    transport: TransportConfig = Field(default_factory=TransportConfig)
    step: StepConfig = Field(default_factory=StepConfig)
    init: InitConfig = Field(default_factory=InitConfig)
    io: IOConfig = Field(default_factory=IOConfig)

    def laws(self):
        return PressureLaw.parse(self.phys.law_plus), PressureLaw.parse(self.phys.law_minus)


SECTIONS = {name: f.annotation for name, f in RunConfig.model_fields.items()}


def all_keys():
    return [f"{s}.{k}" for s, cls in SECTIONS.items() for k in cls.model_fields]


def _physical_checks(cfg: RunConfig):
    for k in ("n1", "n2"):
        if getattr(cfg.grid, k) % 2:
            raise ValidationError("horizontal mode counts must be even", key=f"grid.{k}")
    p = cfg.phys
    for side in ("plus", "minus"):
        mu, mup = getattr(p, f"mu_{side}"), getattr(p, f"mup_{side}")
        if not mu > 0:
            raise ValidationError(f"shear viscosity must be positive (viscosity condition mu > 0), got {mu}",
                                  key=f"phys.mu_{side}")
        if not mup >= 0:
            raise ValidationError(f"bulk viscosity must be non-negative (viscosity condition mu' >= 0), got {mup}",
                                  key=f"phys.mup_{side}")
    for side in ("plus", "minus"):
        try:
            PressureLaw.parse(getattr(p, f"law_{side}"))
        except ValidationError as exc:
            raise ValidationError(str(exc), key=f"phys.law_{side}") from None
    if p.rho_lower is not None and p.rho_upper is not None and p.rho_lower > p.rho_upper:
        raise ValidationError("rho_lower exceeds rho_upper", key="phys.rho_lower")
    if cfg.surface.use_kappa and not cfg.surface.kappa > 0:
        raise ValidationError("use_kappa needs kappa > 0", key="surface.kappa")
    if cfg.init.preset == "snapshot" and not cfg.init.snapshot:
        raise ValidationError("preset 'snapshot' needs init.snapshot", key="init.snapshot")
    return cfg


def _coerce(text):
    t = text.strip()
    low = t.lower()
    if low in ("none", "null", "auto", ""):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    return t


def parse_text(text, source="<string>"):
    """Parse config text.  Returns (RunConfig, defaulted_keys)."""
    valid = set(all_keys())
    seen = {}
    raw = {s: {} for s in SECTIONS}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError(f"expected 'section.key = value' in {source}", line=lineno)
        key, value = (x.strip() for x in body.split("=", 1))
        if key not in valid:
            raise ParseError("unknown key", line=lineno, key=key)
        if key in seen:
            raise ParseError(f"repeated key (first on line {seen[key]})", line=lineno, key=key)
        seen[key] = lineno
        sec, name = key.split(".", 1)
        raw[sec][name] = _coerce(value)
    return build_config(raw, lines=seen)


def build_config(raw, lines=None):
    """Validate a {section: {key: value}} mapping.  Returns (RunConfig, defaulted_keys)."""
    lines = lines or {}
    for sec, vals in raw.items():
        if sec not in SECTIONS:
            raise ParseError("unknown section", key=sec)
        for k in vals:
            if k not in SECTIONS[sec].model_fields:
                raise ParseError("unknown key", key=f"{sec}.{k}")
    # a bare None means "use the default" only for keys whose default is not None
    clean = {s: {k: v for k, v in vals.items()
                 if not (v is None and SECTIONS[s].model_fields[k].default is not None)}
             for s, vals in raw.items()}
    parts = {}
    for s, v in clean.items():
        try:
            parts[s] = SECTIONS[s](**v)
        except pydantic.ValidationError as exc:
            err = exc.errors()[0]
            key = f"{s}." + ".".join(str(x) for x in err["loc"])
            where = f" (line {lines[key]})" if key in lines else ""
            raise ValidationError(err["msg"] + where, key=key) from None
    cfg = RunConfig(**parts)
    _physical_checks(cfg)
    given = {f"{s}.{k}" for s, vals in raw.items() for k in vals}
    defaulted = [k for k in all_keys() if k not in given]
    return cfg, defaulted


def parse_config(path):
    """Read and validate a config file.  Returns (RunConfig, defaulted_keys)."""
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"config file not found: {path}")
    return parse_text(path.read_text(), source=str(path))


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize(cfg: RunConfig):
    out = []
    for sec in SECTIONS:
        part = getattr(cfg, sec)
        for k in type(part).model_fields:
            out.append(f"{sec}.{k} = {_fmt(getattr(part, k))}")
    return "\n".join(out) + "\n"


def header_lines(cfg: RunConfig, defaulted):
    """Run header: every key with its value, defaulted ones marked."""
    d = set(defaulted)
    lines = []
    for line in serialize(cfg).splitlines():
        key = line.split("=", 1)[0].strip()
        lines.append(line + ("    # default" if key in d else ""))
    return lines
