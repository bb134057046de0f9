"""
I/O utilities for crflow runs: JSON summaries, CSV tables and field snapshots.
"""

from __future__ import annotations

from typing import List, Dict, Any, Optional, Tuple
from pathlib import Path
import json
import csv
import math

import numpy as np

from .geometry import NilmanifoldGrid

SNAPSHOT_MAGIC = "CRFLOW1"
SNAPSHOT_DTYPE = "<f8"


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        # JSON has no inf/nan; keep them readable
        return repr(obj)
    return obj


def save_json(path: str | Path, obj: Any) -> None:
    # always UTF-8; the convention ledger contains non-ASCII symbols
    Path(path).write_text(
        json.dumps(_jsonable(obj), indent=2, ensure_ascii=False),
        encoding="utf-8",
    )


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return value


def save_csv(path: str | Path,
             rows: List[Dict[str, Any]],
             fieldnames: Optional[List[str]] = None,
             comments: Optional[List[str]] = None) -> None:
    """Write rows; None becomes an empty field and floats keep full precision.

    `comments` are written first as '# ' lines (the convention ledger).
    """
    path = Path(path)
    if fieldnames is None:
        # union keys
        keys = set()
        for r in rows:
            keys.update(r.keys())
        fieldnames = sorted(keys)
    with path.open("w", newline="", encoding="utf-8") as f:
        for line in comments or []:
            f.write(f"# {line}\n")
        if not fieldnames:
            return
        w = csv.DictWriter(f, fieldnames=fieldnames)
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k)) for k in fieldnames})


def load_csv(path: str | Path) -> List[Dict[str, str]]:
    """Read a CSV written by save_csv, skipping '#' comment lines."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


# ---------
# Snapshots
# ---------

def snapshot_bytes(grid: NilmanifoldGrid, values: np.ndarray, t: float) -> bytes:
    if values.shape[:grid.dim] != grid.shape or values.ndim != grid.dim + 1:
        raise ValueError(f"snapshot values shape {values.shape} does not match grid {grid.shape}")
    header = f"{SNAPSHOT_MAGIC} {grid.m} {grid.N} {values.shape[-1]} {float(t)!r}\n"
    return header.encode("ascii") + np.ascontiguousarray(values, dtype=SNAPSHOT_DTYPE).tobytes(order="C")


def write_snapshot(path: str | Path, grid: NilmanifoldGrid, values: np.ndarray, t: float) -> None:
    """ASCII header 'CRFLOW1 m N n_amb t', then little-endian float64, component index fastest."""
    Path(path).write_bytes(snapshot_bytes(grid, values, t))


def read_snapshot(path: str | Path) -> Tuple[NilmanifoldGrid, np.ndarray, float]:
    raw = Path(path).read_bytes()
    end = raw.find(b"\n")
    if end < 0:
        raise ValueError(f"{path}: missing snapshot header")
    parts = raw[:end].decode("ascii").split()
    if len(parts) != 5 or parts[0] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a {SNAPSHOT_MAGIC} snapshot")
    m, N, n_amb, t = int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4])
    grid = NilmanifoldGrid(m, N)
    payload = np.frombuffer(raw[end + 1:], dtype=SNAPSHOT_DTYPE)
    expected = grid.n_points * n_amb
    if payload.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {payload.size}")
    values = payload.reshape(grid.shape + (n_amb,)).astype(float)
    return grid, values, t
