"""Binary data files with JSON sidecars.

A simulated data matrix is stored row-major as little-endian 64-bit floats
(rows = observations) next to a sidecar ``<name>.json`` holding the shape
and a hash of the generating design.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

__all__ = ["design_hash", "write_data", "read_data"]


def design_hash(design_json: str) -> str:
    return hashlib.sha256(design_json.encode()).hexdigest()[:16]


def write_data(path: Path, y: np.ndarray, design_json: str, seed: int | None = None) -> dict:
    path = Path(path)
    y = np.ascontiguousarray(y, dtype="<f8")
    path.write_bytes(y.tobytes())
    sidecar = {
        "n": int(y.shape[0]),
        "p": int(y.shape[1]),
        "design_hash": design_hash(design_json),
        "seed": seed,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=1))
    return sidecar


def read_data(path: Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise ValueError(f"missing sidecar header {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    n, p = sidecar["n"], sidecar["p"]
    if raw.size != n * p:
        raise ValueError(
            f"data file holds {raw.size} values, sidecar promises {n}x{p}"
        )
    return raw.reshape(n, p).copy(), sidecar
