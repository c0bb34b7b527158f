"""WeightStore file: a JSON manifest followed by a little-endian float32 payload.

Layout::

    b"HPTRW001"                 8-byte magic
    uint64 little-endian        manifest length in bytes
    manifest (UTF-8 JSON)       {"format": 1, "payload_bytes": int, "crc32": int,
                                 "tensors": [{"name", "shape", "count", "offset"}, ...]}
    payload                     float32 little-endian values, tensors back to back

Offsets are in bytes from the start of the payload.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"HPTRW001"


class WeightFileError(ValueError):
    """Corrupt or inconsistent weight file."""


def save_weights(path, params: dict):
    entries, chunks, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data if isinstance(params[name], Tensor) else params[name],
                                   dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "count": int(arr.size), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    payload = b"".join(chunks)
    manifest = json.dumps({"format": 1, "payload_bytes": len(payload), "crc32": zlib.crc32(payload),
                           "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        fh.write(payload)


def load_weights(path, dtype=np.float32, requires_grad: bool = True) -> dict:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise WeightFileError("bad magic")
    if len(raw) < 16:
        raise WeightFileError("truncated header")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    try:
        manifest = json.loads(raw[16:16 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise WeightFileError(f"unreadable manifest: {err}") from None
    payload = raw[16 + mlen:]
    if len(payload) != manifest["payload_bytes"]:
        raise WeightFileError(f"payload length {len(payload)} != manifest {manifest['payload_bytes']}")
    if zlib.crc32(payload) != manifest["crc32"]:
        raise WeightFileError("payload checksum mismatch")
    out, names = {}, set()
    for e in manifest["tensors"]:
        name, shape, count, offset = e["name"], tuple(e["shape"]), e["count"], e["offset"]
        if name in names:
            raise WeightFileError(f"duplicate tensor {name!r}")
        names.add(name)
        if int(np.prod(shape)) != count or offset + 4 * count > len(payload):
            raise WeightFileError(f"tensor {name!r} inconsistent with payload")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
        out[name] = Tensor(arr.astype(dtype), requires_grad=requires_grad)
    return out


def read_manifest(path) -> list:
    raw = Path(path).read_bytes()
    (mlen,) = struct.unpack("<Q", raw[8:16])
    return json.loads(raw[16:16 + mlen].decode())["tensors"]
