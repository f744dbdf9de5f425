"""Single-file checkpoint container: JSON header + named float arrays.

Layout::

    b"LAWMCKPT"  magic
    u64 little-endian header length
    header JSON (format_version, content_hash, config, stage, step, rng
                 state, and an `arrays` table of name/dtype/shape/offset)
    raw array bytes, concatenated in table order

The container is written atomically (temp file + rename) and is byte-stable:
identical contents always produce identical files. The content hash covers
every array and is verified on load.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LAWMCKPT"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def content_hash(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def save_checkpoint(path, arrays: dict[str, np.ndarray], header: dict) -> None:
    path = Path(path)
    names = sorted(arrays)
    table = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        blob = arr.tobytes()
        table.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    full_header = dict(header)
    full_header["format_version"] = FORMAT_VERSION
    full_header["content_hash"] = content_hash(arrays)
    full_header["arrays"] = table
    hjson = json.dumps(full_header, sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(hjson)))
        f.write(hjson)
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = json.loads(raw[start : start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path} has a corrupt header: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} has format_version {header.get('format_version')}, expected {FORMAT_VERSION}"
        )
    body = raw[start + hlen :]
    arrays = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        off = entry["offset"]
        nbytes = count * dtype.itemsize
        if off + nbytes > len(body):
            raise CheckpointError(f"{path} is truncated")
        arrays[entry["name"]] = np.frombuffer(body[off : off + nbytes], dtype=dtype).reshape(shape).copy()
    if content_hash(arrays) != header["content_hash"]:
        raise CheckpointError(f"{path} failed content-hash verification")
    return arrays, header
