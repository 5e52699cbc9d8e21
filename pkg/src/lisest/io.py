"""JSON model files, DMRE/steady-state checkpoints and report files.

Model file layout::

    {"format": "lisest-model", "version": 1,
     "s": 2, "dims": [1, 1], "mdims": [1, 1], "horizon": null, "zero_tol": 0.0,
     "pattern": [[0, 1]],
     "blocks": [{"param_set": 0, "i": 0, "j": 0, "kind": "A",
                 "rows": 1, "cols": 1, "values": [0.9]}, ...],
     "schedule": [{"start_k": 0, "param_set": 0}]}

Values are row-major.  Python's float repr round-trips exactly, so a model
written and read back is bitwise identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ._linalg import block_diag, split_diag_blocks
from .estimator import DmreState, GainSet, SteadyState
from .model import LisModel, ModelError

__all__ = [
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
    "dmre_checkpoint",
    "steady_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "save_json",
]

MODEL_FORMAT = "lisest-model"
DMRE_FORMAT = "lisest-dmre-checkpoint"
STEADY_FORMAT = "lisest-steady-checkpoint"


def _block(M: np.ndarray) -> dict:
    M = np.asarray(M, dtype=float)
    return {"rows": int(M.shape[0]), "cols": int(M.shape[1]), "values": [float(v) for v in M.ravel()]}


def _unblock(d: dict) -> np.ndarray:
    rows, cols = int(d["rows"]), int(d["cols"])
    vals = np.asarray(d["values"], dtype=float)
    if vals.size != rows * cols:
        raise ModelError(f"block declares {rows}x{cols} but carries {vals.size} values")
    return vals.reshape(rows, cols)


def model_to_dict(model: LisModel) -> dict:
    blocks = []
    for p, e in enumerate(model.epochs):
        for (i, j), b in sorted(e.A_blocks.items()):
            blocks.append({"param_set": p, "i": i, "j": j, "kind": "A", **_block(b)})
        for kind, seq in (("C", e.C), ("Q", e.Q), ("R", e.R)):
            for i, b in enumerate(seq):
                blocks.append({"param_set": p, "i": i, "j": i, "kind": kind, **_block(b)})
    return {
        "format": MODEL_FORMAT,
        "version": 1,
        "s": model.s,
        "dims": list(model.dims),
        "mdims": list(model.mdims),
        "horizon": model.horizon,
        "zero_tol": model.zero_tol,
        "pattern": sorted([list(p) for p in model.pattern.nonzero_offdiag]),
        "blocks": blocks,
        "schedule": [{"start_k": e.start_k, "param_set": p} for p, e in enumerate(model.epochs)],
    }


def model_from_dict(d: dict) -> LisModel:
    if d.get("format", MODEL_FORMAT) != MODEL_FORMAT:
        raise ModelError(f"not a model file (format {d.get('format')!r})")
    try:
        s = int(d["s"])
        dims = [int(x) for x in d["dims"]]
        mdims = [int(x) for x in d["mdims"]]
        schedule = d.get("schedule") or [{"start_k": 0, "param_set": 0}]
        raw_blocks = d["blocks"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"malformed model file: {exc}") from exc
    if len(dims) != s or len(mdims) != s:
        raise ModelError("dims and mdims must have s entries")
    sets: dict[int, dict] = {}
    for b in raw_blocks:
        p = int(b.get("param_set", 0))
        i, j, kind = int(b["i"]), int(b.get("j", b["i"])), b["kind"]
        entry = sets.setdefault(p, {"A": {}, "C": [None] * s, "Q": [None] * s, "R": [None] * s})
        M = _unblock(b)
        if kind == "A":
            entry["A"][(i, j)] = M
        elif kind in ("C", "Q", "R"):
            if not 0 <= i < s:
                raise ModelError(f"{kind} block index {i} outside {s} subsystems")
            entry[kind][i] = M
        else:
            raise ModelError(f"unknown block kind {kind!r}")
    epochs = []
    for item in schedule:
        p = int(item["param_set"])
        if p not in sets:
            raise ModelError(f"schedule references missing parameter set {p}")
        e = sets[p]
        for kind in ("C", "Q", "R"):
            if any(x is None for x in e[kind]):
                raise ModelError(f"parameter set {p} lacks some {kind} blocks")
        epochs.append({"start_k": int(item["start_k"]), **e})
    pattern = [tuple(x) for x in d["pattern"]] if d.get("pattern") is not None else None
    return LisModel.from_blocks(dims, mdims, epochs, pattern=pattern, horizon=d.get("horizon"),
                                zero_tol=float(d.get("zero_tol", 0.0)))


def save_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")
    return path


def save_model(path, model: LisModel) -> Path:
    return save_json(path, model_to_dict(model))


def load_model(path) -> LisModel:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from exc
    return model_from_dict(d)


def dmre_checkpoint(state: DmreState) -> dict:
    return {
        "format": DMRE_FORMAT,
        "k": state.k,
        "dims": [b.shape[0] for b in state.P],
        "P": [_block(b) for b in state.P],
        "P_bar": [_block(b) for b in state.P_bar],
    }


def steady_checkpoint(ss: SteadyState, dims) -> dict:
    return {
        "format": STEADY_FORMAT,
        "dims": list(dims),
        "theta": [float(t) for t in ss.theta],
        "P_bar_star": [_block(b) for b in split_diag_blocks(ss.P_bar_star, dims)],
        "K_star": [_block(K) for K in ss.K_star.K],
        "iterations": ss.iterations,
        "residual": ss.residual,
        "converged": ss.converged,
        "diverged": ss.diverged,
    }


def save_checkpoint(path, obj, dims=None) -> Path:
    if isinstance(obj, DmreState):
        return save_json(path, dmre_checkpoint(obj))
    if isinstance(obj, SteadyState):
        if dims is None:
            dims = [K.shape[0] for K in obj.K_star.K]
        return save_json(path, steady_checkpoint(obj, dims))
    raise TypeError(f"cannot checkpoint {type(obj).__name__}")


def load_checkpoint(path) -> DmreState | SteadyState:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    fmt = d.get("format")
    if fmt == DMRE_FORMAT:
        return DmreState(int(d["k"]), tuple(_unblock(b) for b in d["P"]), tuple(_unblock(b) for b in d["P_bar"]))
    if fmt == STEADY_FORMAT:
        return SteadyState(
            block_diag([_unblock(b) for b in d["P_bar_star"]]),
            GainSet(tuple(_unblock(b) for b in d["K_star"])),
            np.asarray(d["theta"], dtype=float),
            int(d["iterations"]),
            float(d["residual"]),
            bool(d["converged"]),
            bool(d["diverged"]),
        )
    raise ModelError(f"unknown checkpoint format {fmt!r}")

