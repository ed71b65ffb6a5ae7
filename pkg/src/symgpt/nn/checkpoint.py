"""Checkpoint files: a single ``.npz`` with named arrays and a JSON header.

The header (``__meta__``) carries the format name and version, the dtype and
shape of every stored array, plus whatever the caller puts in ``meta``
(model config, vocabulary, training state).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "symgpt-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict):
    path = Path(path)
    header = {
        "format": FORMAT,
        "version": VERSION,
        "arrays": {k: {"shape": list(np.shape(v)), "dtype": str(np.asarray(v).dtype)} for k, v in arrays.items()},
        "meta": meta,
    }
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__meta__"] = np.array(json.dumps(header))
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as f:
        np.savez(f, **payload)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as z:
            if "__meta__" not in z.files:
                raise CheckpointError(f"{path}: missing header")
            header = json.loads(str(z["__meta__"]))
            arrays = {k: z[k] for k in z.files if k != "__meta__"}
    except (OSError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc}") from exc
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')} (expected {VERSION})")
    for k, spec in header["arrays"].items():
        if k not in arrays or list(arrays[k].shape) != spec["shape"]:
            raise CheckpointError(f"{path}: array {k!r} missing or mis-shaped")
    return arrays, header["meta"]
