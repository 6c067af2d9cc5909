"""File formats: model JSON, dataset CSV, tidy result CSV and report JSON.

Floats are written losslessly (shortest round-trip repr in JSON, 17
significant digits in CSV) and every output carries a meta block with the
tool version, seed and a hash of the canonicalised configuration.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError
from .expfam import parse_family
from .gating import GateParams
from .moe import Dataset, MoEParams
from .polybasis import PolyBasis

MODEL_FORMAT_VERSION = 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def meta_block(seed, config) -> dict:
    return {"tool_version": __version__, "seed": seed, "config_hash": config_hash(config)}


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: invalid JSON ({exc})") from None


def model_to_dict(model: MoEParams) -> dict:
    return {
        "version": MODEL_FORMAT_VERSION,
        "family": str(model.family),
        "s": model.s,
        "k": model.k,
        "m": model.m,
        "gate_W": model.gate.W.tolist(),
        "pinned_expert": model.m,
        "experts": model.experts.tolist(),
        "x_scaling": {"offset": model.x_offset.tolist(), "scale": model.x_scale.tolist()},
    }


def model_from_dict(d: dict) -> MoEParams:
    required = {"version", "family", "s", "k", "m", "gate_W", "pinned_expert", "experts", "x_scaling"}
    missing = required - set(d)
    if missing:
        raise DataError(f"model JSON missing keys {sorted(missing)}")
    extra = set(d) - required - {"meta"}
    if extra:
        raise DataError(f"model JSON has unknown keys {sorted(extra)}")
    if d["version"] != MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported model format version {d['version']}")
    m, s, k = int(d["m"]), int(d["s"]), int(d["k"])
    if int(d["pinned_expert"]) != m:
        raise DataError("only the last expert may be the pinned gate reference")
    try:
        W = np.asarray(d["gate_W"], dtype=float).reshape(m - 1, s + 1)
        gate = GateParams(m, s, W)
        xs = d["x_scaling"]
        return MoEParams(parse_family(d["family"]), PolyBasis(s, k), gate,
                         np.asarray(d["experts"], dtype=float), xs["offset"], xs["scale"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"malformed model JSON: {exc}") from None


def write_model(path, model: MoEParams, meta: dict | None = None) -> None:
    d = model_to_dict(model)
    if meta is not None:
        d["meta"] = meta
    write_json(path, d)


def read_model(path) -> MoEParams:
    return model_from_dict(read_json(path))


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return "" if x is None else str(x)


def csv_text(header, rows, meta: dict | None = None) -> str:
    buf = _io.StringIO()
    if meta is not None:
        buf.write("# " + canonical_json(meta) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        vals = [r.get(h) for h in header] if isinstance(r, dict) else r
        w.writerow([fmt(v) for v in vals])
    return buf.getvalue()


def write_dataset(path, data: Dataset, meta: dict | None = None) -> None:
    header = [f"x{i + 1}" for i in range(data.s)] + ["y"]
    rows = [list(x) + [y] for x, y in zip(data.X, data.Y)]
    Path(path).write_text(csv_text(header, rows, meta))


def read_dataset(path) -> Dataset:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"file not found: {p}")
    lines = [ln for ln in p.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise DataError(f"{p}: empty dataset file")
    rows = list(csv.reader(lines))
    header = [h.strip() for h in rows[0]]
    s = len(header) - 1
    if s < 1 or header != [f"x{i + 1}" for i in range(s)] + ["y"]:
        raise DataError(f"{p}: header must be x1,...,xs,y; got {','.join(header)}")
    try:
        arr = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, s + 1)
    except ValueError as exc:
        raise DataError(f"{p}: {exc}") from None
    try:
        return Dataset(arr[:, :s], arr[:, s])
    except ValueError as exc:
        raise DataError(f"{p}: {exc}") from None
