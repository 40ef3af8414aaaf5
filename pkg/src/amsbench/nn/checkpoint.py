"""Flat float32 parameter checkpoints with a text manifest."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np


def save_checkpoint(path, named_params, config_hash: str = "", seed: int = 0) -> tuple[Path, Path]:
    """Write ``<path>.bin`` (little-endian float32) and ``<path>.manifest``."""
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    man_path = path.with_suffix(".manifest")
    lines = [f"config_hash {config_hash}", f"seed {seed}"]
    offset = 0
    chunks = []
    for name, p in named_params:
        arr = np.asarray(p.value if hasattr(p, "value") else p, dtype="<f4")
        shape = "x".join(map(str, arr.shape)) or "scalar"
        lines.append(f"param {name} {shape} {offset}")
        chunks.append(arr.ravel())
        offset += arr.size
    data = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
    bin_path.write_bytes(data.astype("<f4").tobytes())
    lines.append(f"sha256 {hashlib.sha256(data.astype('<f4').tobytes()).hexdigest()}")
    man_path.write_text("\n".join(lines) + "\n")
    return bin_path, man_path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = Path(path)
    data = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f4")
    params, meta = {}, {}
    for line in path.with_suffix(".manifest").read_text().splitlines():
        parts = line.split()
        if parts[0] == "param":
            name, shape, offset = parts[1], parts[2], int(parts[3])
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
            size = int(np.prod(dims)) if dims else 1
            params[name] = data[offset:offset + size].reshape(dims).astype(np.float64)
        else:
            meta[parts[0]] = " ".join(parts[1:])
    return params, meta


def restore(module, params: dict[str, np.ndarray]) -> None:
    for name, p in module.named_parameters():
        if name not in params:
            raise KeyError(f"checkpoint has no parameter {name}")
        if params[name].shape != p.value.shape:
            raise ValueError(f"{name}: checkpoint shape {params[name].shape} != {p.value.shape}")
        p.value[...] = params[name]


def state_digest(named_params) -> str:
    h = hashlib.sha256()
    for name, p in named_params:
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    return h.hexdigest()
