"""Checkpoint files.

Layout: one ASCII header line ``DRIVEINTENT-CHECKPOINT <version> sha256=<hex>``
followed by a UTF-8 JSON payload. The digest covers the payload bytes.
Parameter arrays are stored as base64 of little-endian float64 (``<f8``)
in C order, so a reload is bit-exact. Output is byte-deterministic.
"""
from __future__ import annotations

import base64
import hashlib
import json

import numpy as np

from .models import IntentModel, ModelConfig, model_class

MAGIC = "DRIVEINTENT-CHECKPOINT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


def _encode_array(a: np.ndarray) -> dict:
    data = np.ascontiguousarray(a, dtype="<f8").tobytes()
    return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(data).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    if d.get("dtype") != "<f8":
        raise CheckpointError(f"unsupported array dtype {d.get('dtype')!r}")
    raw = base64.b64decode(d["data"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return arr.reshape(d["shape"])


def dumps(model: IntentModel) -> bytes:
    payload = {
        "kind": model.kind,
        "seed": int(model.seed),
        "config": model.config.to_dict(),
        "meta": model.meta,
        "history": model.history,
        "params": {k: _encode_array(v) for k, v in sorted(model.params.items())},
    }
    body = json.dumps(payload, sort_keys=True, indent=1).encode("utf-8")
    digest = hashlib.sha256(body).hexdigest()
    return f"{MAGIC} {VERSION} sha256={digest}\n".encode("ascii") + body


def loads(blob: bytes) -> IntentModel:
    header, sep, body = blob.partition(b"\n")
    parts = header.decode("ascii", errors="replace").split()
    if not sep or len(parts) != 3 or parts[0] != MAGIC or not parts[2].startswith("sha256="):
        raise CheckpointError("not a checkpoint file (bad header)")
    try:
        version = int(parts[1])
    except ValueError:
        raise CheckpointError(f"bad checkpoint version {parts[1]!r}") from None
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}; expected {VERSION}")
    if hashlib.sha256(body).hexdigest() != parts[2][len("sha256="):]:
        raise ChecksumError("checkpoint checksum mismatch (file truncated or corrupted)")
    payload = json.loads(body.decode("utf-8"))
    config = ModelConfig.from_dict(payload["config"])
    params = {k: _decode_array(v) for k, v in payload["params"].items()}
    model = model_class(payload["kind"])(config, params=params, seed=payload["seed"])
    model.history = payload["history"]
    model.meta = payload["meta"]
    return model


def save_checkpoint(model: IntentModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load_checkpoint(path) -> IntentModel:
    with open(path, "rb") as fh:
        return loads(fh.read())
