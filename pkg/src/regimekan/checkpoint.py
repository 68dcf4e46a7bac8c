"""Single-file model checkpoints.

Layout: ``MAGIC | u64 header length | JSON header | float64 blocks (little endian) | sha256``.
The digest covers every byte before it.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .data import Scaler
from .model import ModelConfig, RegimeKAN

MAGIC = b"RKANCKPT"
FORMAT_VERSION = 1
_DIGEST = 32


class CheckpointError(ValueError):
    pass


class DigestMismatch(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class SchemaError(CheckpointError):
    pass


@dataclass
class PipelineState:
    feature_names: list[str]
    scaler: Scaler
    target_scaler: Scaler
    selected: list[str] = field(default_factory=list)
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"feature_names": self.feature_names, "selected": self.selected,
                "scaler": self.scaler.to_dict(), "target_scaler": self.target_scaler.to_dict(),
                "seed": self.seed, "extra": self.extra}


def _require(d: dict, key: str, where: str):
    if key not in d or d[key] is None:
        raise SchemaError(f"checkpoint {where} missing '{key}'")
    return d[key]


def atomic_write_bytes(path, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(model: RegimeKAN, state: PipelineState, config: dict | None = None) -> bytes:
    arrays = model.state_dict()
    entries, blocks, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"parameter '{name}' is not finite")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blocks.append(arr.tobytes())
        offset += arr.size
    header = {
        "format_version": FORMAT_VERSION,
        "model": model.config_dict(),
        "config": config or {},
        "pipeline": state.to_dict(),
        "parameters": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = MAGIC + struct.pack("<Q", len(head)) + head + b"".join(blocks)
    return body + hashlib.sha256(body).digest()


def save(model: RegimeKAN, state: PipelineState, path, config: dict | None = None) -> str:
    payload = encode(model, state, config)
    try:
        atomic_write_bytes(path, payload)
    except OSError as exc:
        raise CheckpointError(f"could not write checkpoint {path}: {exc}") from exc
    return hashlib.sha256(payload).hexdigest()


def decode(payload: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(payload) < len(MAGIC) + 8 + _DIGEST or not payload.startswith(MAGIC):
        raise DigestMismatch("not a checkpoint file or truncated")
    body, digest = payload[:-_DIGEST], payload[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise DigestMismatch("checkpoint digest mismatch (file truncated or modified)")
    (n,) = struct.unpack("<Q", body[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(body[start : start + n].decode())
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported checkpoint format_version {version!r} (expected {FORMAT_VERSION})")
    data = np.frombuffer(body[start + n :], dtype="<f8")
    arrays = {}
    for e in _require(header, "parameters", "header"):
        block = data[e["offset"] : e["offset"] + e["count"]]
        if block.size != e["count"]:
            raise SchemaError(f"parameter '{e['name']}' block is short")
        arrays[e["name"]] = block.astype(np.float64).reshape(e["shape"])
    return header, arrays


def load(path) -> tuple[RegimeKAN, PipelineState, dict]:
    """Returns ``(model, pipeline state, header)``."""
    with open(path, "rb") as fh:
        header, arrays = decode(fh.read())
    pipe = _require(header, "pipeline", "header")
    scaler = Scaler.from_dict(_require(pipe, "scaler", "pipeline"))
    target_scaler = Scaler.from_dict(_require(pipe, "target_scaler", "pipeline"), scalar=True)
    mcfg = dict(_require(header, "model", "header"))
    lam = mcfg.pop("lambda_sparsity", 0.001)
    model = RegimeKAN(ModelConfig(**mcfg), lam)
    try:
        model.load_state_dict(arrays)
    except KeyError as exc:
        raise SchemaError(f"checkpoint {exc.args[0]}") from exc
    state = PipelineState(_require(pipe, "feature_names", "pipeline"), scaler, target_scaler,
                          pipe.get("selected", []), pipe.get("seed", 0), pipe.get("extra", {}))
    return model, state, header
