"""Binary checkpoint container for named float64 tensors.

Layout (little-endian): 8-byte magic, uint32 version, uint64 header length,
a UTF-8 JSON header (metadata plus name/shape of each tensor), then the
raw tensor values in header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"THRDSEL\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = [{"name": k, "shape": list(np.shape(v))} for k, v in tensors.items()]
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in tensors.values())
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + body


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < _PREFIX.size:
        raise CheckpointError("corrupt checkpoint: file too short")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("corrupt checkpoint: bad magic bytes")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    start = _PREFIX.size + header_len
    if len(blob) < start:
        raise CheckpointError("corrupt checkpoint: truncated header")
    try:
        header = json.loads(blob[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: unreadable header ({exc})") from exc
    tensors = {}
    pos = start
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(blob):
            raise CheckpointError("corrupt checkpoint: truncated tensor data")
        tensors[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=pos).astype(np.float64).reshape(shape)
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError("corrupt checkpoint: trailing bytes")
    return tensors, header["meta"]


def save_checkpoint(tensors: dict[str, np.ndarray], path: str | Path, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
