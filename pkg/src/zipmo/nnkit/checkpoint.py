"""Checkpoint container: named parameter arrays + config echo in one file.

Layout (stable, versioned): a .npz archive whose ``__meta__`` entry holds a
JSON document {"format_version", "kind", "config"}; every other entry is one
named float array. Content hashes cover array names, shapes, dtypes, raw
bytes, and the config, so they are independent of archive timestamps.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    config: dict
    kind: str
    format_version: int = FORMAT_VERSION

    @property
    def content_hash(self) -> str:
        return content_hash(self.arrays, self.config)


def content_hash(arrays: dict[str, np.ndarray], config: dict) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(config, sort_keys=True).encode())
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def save_checkpoint(path, arrays: dict[str, np.ndarray], config: dict, kind: str) -> str:
    """Write the container; returns its content hash."""
    meta = json.dumps({"format_version": FORMAT_VERSION, "kind": kind, "config": config})
    payload = dict(arrays)
    payload["__meta__"] = np.frombuffer(meta.encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **payload)
    return content_hash(arrays, config)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        if "__meta__" not in data:
            raise CheckpointError(f"{path}: missing __meta__ header")
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {meta.get('format_version')}")
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    return Checkpoint(arrays=arrays, config=meta["config"], kind=meta["kind"])


def state_dict_arrays(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_state_dict_arrays(module: torch.nn.Module, arrays: dict[str, np.ndarray]) -> None:
    sd = module.state_dict()
    missing = set(sd) - set(arrays)
    extra = set(arrays) - set(sd)
    if missing or extra:
        raise CheckpointError(f"parameter name mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
    module.load_state_dict({k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in arrays.items()})
