"""Single-file checkpoints: magic, JSON manifest, little-endian payload.

Layout::

    b"MTAMCKPT" | u32 manifest length | manifest (utf-8 JSON) | payload

The manifest carries the format version, the model config, a tensor
directory (name, shape, offset, dtype) and the sha256 of the payload.
The digest is verified before any tensor is materialised.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CompatibilityError, FormatError
from .model import ModelConfig, ModelParams

MAGIC = b"MTAMCKPT"
VERSION = 1
DTYPE = "<f8"


def to_bytes(params: ModelParams, extra: dict | None = None) -> bytes:
    directory = []
    chunks = []
    offset = 0
    for name, t in params.named_parameters().items():
        buf = np.ascontiguousarray(t.values, dtype=DTYPE).tobytes()
        directory.append({"name": name, "shape": list(t.shape), "offset": offset, "dtype": DTYPE})
        chunks.append(buf)
        offset += len(buf)
    payload = b"".join(chunks)
    manifest = {
        "format": "mtam-checkpoint",
        "version": VERSION,
        "config": params.config.to_dict(),
        "tensors": directory,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + payload


def save(params: ModelParams, path, extra: dict | None = None) -> str:
    """Write ``params`` to ``path``; returns the payload digest."""
    blob = to_bytes(params, extra)
    Path(path).write_bytes(blob)
    return read_manifest_bytes(blob)[0]["sha256"]


def read_manifest_bytes(blob: bytes):
    if blob[:len(MAGIC)] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    try:
        (n,) = struct.unpack_from("<I", blob, len(MAGIC))
        start = len(MAGIC) + 4
        manifest = json.loads(blob[start:start + n].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint manifest: {exc}") from None
    if manifest.get("format") != "mtam-checkpoint":
        raise FormatError("not a checkpoint manifest")
    if manifest.get("version") != VERSION:
        raise CompatibilityError(f"checkpoint version {manifest.get('version')} unsupported (expected {VERSION})")
    return manifest, blob[start + n:]


def from_bytes(blob: bytes) -> ModelParams:
    manifest, payload = read_manifest_bytes(blob)
    if len(payload) != manifest["payload_bytes"]:
        raise FormatError(f"payload is {len(payload)} bytes, manifest says {manifest['payload_bytes']}")
    if hashlib.sha256(payload).hexdigest() != manifest["sha256"]:
        raise FormatError("checkpoint payload digest mismatch (file corrupted)")
    config = ModelConfig(**manifest["config"])
    params = ModelParams.init(config, np.random.default_rng(0))
    named = params.named_parameters()
    listed = {e["name"] for e in manifest["tensors"]}
    if listed != set(named):
        raise CompatibilityError(f"tensor set differs from model layout: {sorted(listed ^ set(named))}")
    for entry in manifest["tensors"]:
        t = named[entry["name"]]
        if tuple(entry["shape"]) != t.shape:
            raise CompatibilityError(f"{entry['name']}: shape {entry['shape']} vs model {list(t.shape)}")
        count = int(np.prod(entry["shape"], dtype=np.int64))
        vals = np.frombuffer(payload, dtype=entry["dtype"], count=count, offset=entry["offset"])
        t.values[...] = vals.reshape(t.shape)
    return params


def load(path) -> ModelParams:
    return from_bytes(Path(path).read_bytes())


def manifest(path) -> dict:
    return read_manifest_bytes(Path(path).read_bytes())[0]


def digest(path) -> str:
    return manifest(path)["sha256"]
