"""Snapshots (npz + JSON sidecar) and run reports."""
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .fields import VolumeField


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, float) and not np.isfinite(x):
        return repr(x)
    return x


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def save_snapshot(out_dir, step, state, meta=None, name=None):
    """Write snap_<step>.npz with u, q, eta, rho, J and a JSON sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = name or f"snap_{step:06d}"
    arrays = dict(u_plus=state.u.plus, u_minus=state.u.minus, q_plus=state.q.plus, q_minus=state.q.minus,
                  eta=np.asarray(state.eta), t=np.array(state.t))
    if state.rho is not None:
        arrays.update(rho_plus=state.rho.plus, rho_minus=state.rho.minus)
    if state.geometry is not None:
        arrays.update(J_plus=state.geometry.J.plus, J_minus=state.geometry.J.minus)
    np.savez(out / f"{stem}.npz", **arrays)
    side = dict(step=step, t=float(state.t), grid=list(state.u.plus.shape[1:]) + [state.u.minus.shape[-1]])
    side.update(meta or {})
    write_json(out / f"{stem}.json", side)
    return out / f"{stem}.npz"


def load_snapshot(path, torus, slab):
    """(u, q, eta, t) from a snapshot written by save_snapshot."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"snapshot not found: {path}", key="init.snapshot")
    with np.load(path) as d:
        try:
            u = VolumeField(torus, slab, d["u_plus"], d["u_minus"])
            q = VolumeField(torus, slab, d["q_plus"], d["q_minus"])
        except ValueError as exc:
            raise ValidationError(f"snapshot does not match the configured grid: {exc}", key="init.snapshot") from None
        return u, q, np.array(d["eta"]), float(d["t"])
