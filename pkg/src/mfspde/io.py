"""Deterministic result files: CSV tables with 17 significant digits, JSON
reports, and a manifest whose hash covers every emitted file."""

from __future__ import annotations

import csv
import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_field_csv(path: Path, times: np.ndarray, x: np.ndarray, columns: dict[str, np.ndarray]) -> Path:
    """Rows (t, x, col...) for every (time, node); each column has shape (len(times), len(x))."""
    path = Path(path)
    names = list(columns)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", *names])
        for k, t in enumerate(times):
            for i, xi in enumerate(x):
                w.writerow([fmt(t), fmt(xi), *(fmt(columns[c][k, i]) for c in names)])
    return path


def write_table_csv(path: Path, header: list[str], rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (int, float, np.number)) and not isinstance(v, bool) else v for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, config_echo: dict, files: list[Path]) -> dict:
    """manifest.json with per-file hashes and an overall hash.  The timestamp
    is recorded but excluded from ``hash``."""
    out_dir = Path(out_dir)
    entries = {Path(f).name: sha256_file(f) for f in sorted(files, key=lambda p: Path(p).name)}
    body = {"command": command, "version": __version__, "config": _jsonable(config_echo), "files": entries}
    digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
    manifest = dict(body, hash=digest, timestamp=datetime.now(timezone.utc).isoformat())
    write_json(out_dir / "manifest.json", manifest)
    return manifest
