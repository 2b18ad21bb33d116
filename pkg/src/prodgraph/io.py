"""On-disk formats: CSV matrices, GSO files, signal tensors and JSON reports."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .graph import Gso, NormMode, validate_gso
from .signals import SignalTensor, TensorMeta

__all__ = [
    "FormatError",
    "write_matrix",
    "read_matrix",
    "gso_path",
    "write_gso",
    "read_gso",
    "write_tensor",
    "read_tensor",
    "write_json",
    "read_json",
    "fmt_float",
    "jsonable",
]

GSO_SUFFIX = ".gso.csv"


class FormatError(ValueError):
    """Malformed input file."""


def fmt_float(x: float) -> str:
    """Shortest round-trip text for a float; ``nan``/``inf`` spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def write_matrix(path, M) -> Path:
    path = Path(path)
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {M.shape}")
    lines = [",".join(fmt_float(v) for v in row) for row in M]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_matrix(path) -> np.ndarray:
    """Parse a headerless CSV matrix; dimensions are inferred, comments are rejected."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 text") from exc
    rows = []
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if row[0].lstrip().startswith("#"):
            raise FormatError(f"{path}:{lineno}: comment lines are not allowed")
        try:
            rows.append([float(c) for c in row])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: empty matrix")
    width = len(rows[0])
    for i, r in enumerate(rows, start=1):
        if len(r) != width:
            raise FormatError(f"{path}: row {i} has {len(r)} entries, expected {width}")
    return np.array(rows)


def gso_path(directory, stem: str, norm_mode: NormMode | str) -> Path:
    """``<stem>.<norm_mode>.gso.csv`` inside ``directory``."""
    return Path(directory) / f"{stem}.{NormMode(norm_mode).value}{GSO_SUFFIX}"


def write_gso(directory, stem: str, S: Gso) -> Path:
    return write_matrix(gso_path(directory, stem, S.norm_mode), S.weights)


def _mode_from_name(path: Path) -> NormMode | None:
    name = path.name
    if not name.endswith(GSO_SUFFIX):
        return None
    head = name[: -len(GSO_SUFFIX)]
    for mode in NormMode:
        if head.endswith("." + mode.value):
            return mode
    raise FormatError(f"{path}: unknown normalization in file name")


def read_gso(path, atol: float = 0.0, norm_atol: float = 1e-9) -> Gso:
    """Read a GSO; the normalization comes from the ``*.<mode>.gso.csv`` file name."""
    path = Path(path)
    mode = _mode_from_name(path) or NormMode.BINARY
    return validate_gso(read_matrix(path), mode, atol=atol, norm_atol=norm_atol)


def write_tensor(directory, t: SignalTensor) -> Path:
    """One CSV per slab (``slab_00000.csv``, ...) plus ``meta.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for r, Y in enumerate(t.slabs):
        write_matrix(directory / f"slab_{r:05d}.csv", Y)
    m = t.meta
    write_json(directory / "meta.json", {"generator": m.generator, "seed": m.seed, "P": m.P, "Q": m.Q, "R": m.R})
    return directory


def read_tensor(directory) -> SignalTensor:
    directory = Path(directory)
    meta = read_json(directory / "meta.json")
    try:
        tm = TensorMeta(str(meta["generator"]), meta["seed"], int(meta["P"]), int(meta["Q"]), int(meta["R"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{directory}/meta.json: {exc}") from exc
    slabs = [read_matrix(directory / f"slab_{r:05d}.csv") for r in range(tm.R)]
    try:
        return SignalTensor(np.array(slabs), tm)
    except ValueError as exc:
        raise FormatError(f"{directory}: {exc}") from exc


def jsonable(obj: Any) -> Any:
    """Copy of ``obj`` with numpy scalars unwrapped and non-finite floats as ``None``."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return jsonable(obj.item())
    return obj


def write_json(path, obj: Any) -> Path:
    """Sorted, indented JSON; non-finite floats become ``null``."""
    path = Path(path)
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
