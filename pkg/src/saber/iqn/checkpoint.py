"""Versioned checkpoint blobs: JSON header plus a little-endian parameter dump.

Layout::

    magic      8 bytes  b"SABRCKPT"
    version    u16 LE   format version (1)
    hdr_len    u32 LE   length of the JSON header
    header     hdr_len bytes of UTF-8 JSON:
                 {"spec": {...}, "params": [[name, shape, dtype], ...],
                  "param_version": int, "meta": {...}}
    payload    each parameter in header order, C order, little-endian
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import NetworkSpec

MAGIC = b"SABRCKPT"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<8sHI")


class CheckpointError(ValueError):
    pass


def serialize(params: dict, spec: NetworkSpec, param_version: int = 0, meta: dict | None = None) -> bytes:
    entries = []
    chunks = []
    for name in sorted(params):
        a = params[name]
        le = a.dtype.newbyteorder("<")
        entries.append([name, list(a.shape), le.str])
        chunks.append(np.ascontiguousarray(a, dtype=le).tobytes())
    header = json.dumps(
        {"spec": spec.to_dict(), "params": entries, "param_version": int(param_version), "meta": meta or {}},
        sort_keys=True,
    ).encode()
    return _HEAD.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def deserialize(blob: bytes) -> tuple[dict, NetworkSpec, int, dict]:
    if len(blob) < _HEAD.size:
        raise CheckpointError("checkpoint too short")
    magic, version, hlen = _HEAD.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _HEAD.size
    try:
        header = json.loads(blob[start: start + hlen])
    except ValueError as e:
        raise CheckpointError(f"bad checkpoint header: {e}") from None
    off = start + hlen
    params = {}
    for name, shape, dtype in header["params"]:
        dt = np.dtype(dtype)
        n = int(np.prod(shape)) * dt.itemsize
        if off + n > len(blob):
            raise CheckpointError(f"checkpoint truncated in {name}")
        params[name] = np.frombuffer(blob, dtype=dt, count=int(np.prod(shape)), offset=off).reshape(shape).astype(dt.newbyteorder("="))
        off += n
    if off != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    spec = NetworkSpec.from_dict(header["spec"])
    return params, spec, int(header["param_version"]), header.get("meta", {})


def save(path, params, spec, param_version=0, meta=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(serialize(params, spec, param_version, meta))
    tmp.replace(path)
    return path


def load(path):
    return deserialize(Path(path).read_bytes())


def write_nan_dump(dump_dir, agent, batch, error: Exception) -> Path:
    """Write ``nan_dump_step{N}/`` with the parameters, the offending batch and the reason."""
    path = Path(dump_dir or ".") / f"nan_dump_step{agent.learner_steps}"
    path.mkdir(parents=True, exist_ok=True)
    save(path / "params.bin", agent.params, agent.spec, agent.learner_steps, {"error": str(error)})
    if batch is not None:
        weights = batch.weights if batch.weights is not None else np.ones(len(batch.actions))
        np.savez(path / "batch.npz", states=batch.states, actions=batch.actions, returns=batch.returns,
                 discounts=batch.discounts, next_states=batch.next_states, weights=weights)
    (path / "reason.txt").write_text(f"{type(error).__name__}: {error}\n")
    return path
