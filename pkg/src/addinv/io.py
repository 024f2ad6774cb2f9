"""Files on disk: datasets, JSON configurations, curve tables and manifests.

Floats are written with 17 significant digits so that anything written
here reads back bit-for-bit.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import os
import platform
from pathlib import Path

import numpy as np

from . import __version__
from .empirical import Dataset

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
FLOAT_FORMAT = "%.17g"


class InputError(ValueError):
    """Malformed dataset or configuration."""


def read_dataset(path) -> Dataset:
    """Read a comma separated file with header ``x1,...,xd,y``."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"dataset not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [cell.strip() for cell in rows[0]]
    d = len(header) - 1
    expected = [f"x{j + 1}" for j in range(d)] + ["y"]
    if d < 1 or header != expected:
        raise InputError(f"{path}: header must be {','.join(expected) if d >= 1 else 'x1,...,xd,y'}, got {','.join(header)}")
    body = rows[1:]
    try:
        values = np.array([[float(cell) for cell in r] for r in body], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric entry ({exc})") from None
    if any(len(r) != d + 1 for r in body):
        raise InputError(f"{path}: every row needs {d + 1} fields")
    if values.shape[0] < 10:
        raise InputError(f"{path}: need at least 10 observations, got {values.shape[0]}")
    try:
        return Dataset(values[:, :d], values[:, d])
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def write_dataset(path, data: Dataset) -> None:
    header = ",".join([f"x{j + 1}" for j in range(data.dim)] + ["y"])
    np.savetxt(path, np.column_stack([data.X, data.Y]), delimiter=",", header=header, comments="",
               fmt=FLOAT_FORMAT)


def load_config(path, section: str) -> dict:
    """Load a JSON configuration and return its ``section`` mapping."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"configuration not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: top level must be an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InputError(f"{path}: unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")
    body = doc.get(section, {})
    if not isinstance(body, dict):
        raise InputError(f"{path}: '{section}' must be an object")
    return body


def write_curve(path, x, estimate, variance=None, band=None) -> None:
    """Write ``x,estimate,variance,band_lo,band_hi``; missing columns are left empty."""
    n = np.asarray(x).size
    nan = np.full(n, np.nan)
    variance = nan if variance is None else variance
    lo, hi = (nan, nan) if band is None else band
    table = np.column_stack([x, estimate, variance, lo, hi])
    np.savetxt(path, table, delimiter=",", header="x,estimate,variance,band_lo,band_hi", comments="",
               fmt=FLOAT_FORMAT)


def write_table(path, header, columns) -> None:
    np.savetxt(path, np.column_stack(columns), delimiter=",", header=",".join(header), comments="",
               fmt=FLOAT_FORMAT)


def read_table(path) -> dict:
    """Read a numeric table written by this module into a column mapping."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    values = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: values[:, i] for i, name in enumerate(header)}


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir, command: str, config: dict, seeds: dict | None, started: _dt.datetime) -> Path:
    """Record configuration, seeds, version and digests of every file in ``out_dir``."""
    out_dir = Path(out_dir)
    files = sorted(p for p in out_dir.iterdir() if p.is_file() and p.name != MANIFEST_NAME)
    manifest = {
        "command": command,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started": started.isoformat(),
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "threads_env": os.environ.get("ADDINV_THREADS"),
        "config": config,
        "seeds": seeds,
        "files": {p.name: {"sha256": sha256_file(p), "bytes": p.stat().st_size} for p in files},
    }
    path = out_dir / MANIFEST_NAME
    write_json(path, manifest)
    return path


def verify_manifest(out_dir) -> bool:
    """True when every file listed in the manifest exists with its digest."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / MANIFEST_NAME).read_text())
    return all((out_dir / name).is_file() and sha256_file(out_dir / name) == entry["sha256"]
               for name, entry in manifest["files"].items())
