"""Binary checkpoint stream.

Layout (little-endian)::

    b"TDSCKPT\\0"  uint16 version
    uint32 meta_len, meta_len bytes of UTF-8 JSON (RNG state, lineage, ...)
    uint32 n_blobs
    n_blobs x [uint16 name_len, name, uint32 rows, uint32 cols, rows*cols float64]
"""
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"TDSCKPT\0"
VERSION = 1


class CheckpointVersionError(FormatError):
    pass


def write_checkpoint(path, blobs, meta):
    """``blobs`` maps names to 2-D float64 arrays; order is preserved."""
    out = bytearray(MAGIC)
    out += struct.pack("<H", VERSION)
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    out += struct.pack("<I", len(meta_bytes)) + meta_bytes
    out += struct.pack("<I", len(blobs))
    for name, arr in blobs.items():
        arr = np.asarray(arr, dtype="<f8")
        if arr.ndim != 2:
            raise FormatError(f"blob {name} must be 2-D")
        nb = name.encode()
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<II", *arr.shape)
        out += np.ascontiguousarray(arr).tobytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(out))
    tmp.replace(path)


def read_checkpoint(path, expect_schema_hash=None):
    """Return ``(blobs, meta)``."""
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise FormatError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    (version,) = take("<H")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    (meta_len,) = take("<I")
    if pos + meta_len > len(data):
        raise FormatError(f"{path}: truncated metadata")
    try:
        meta = json.loads(data[pos:pos + meta_len].decode())
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"{path}: unreadable metadata ({exc})") from exc
    pos += meta_len
    if expect_schema_hash is not None and meta.get("schema_hash") != expect_schema_hash:
        raise FormatError(f"{path}: schema hash {meta.get('schema_hash')} != {expect_schema_hash}")
    (n_blobs,) = take("<I")
    blobs = {}
    for _ in range(n_blobs):
        (name_len,) = take("<H")
        name = data[pos:pos + name_len].decode()
        pos += name_len
        rows, cols = take("<II")
        nbytes = rows * cols * 8
        if pos + nbytes > len(data):
            raise FormatError(f"{path}: truncated blob {name}")
        blobs[name] = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).astype(np.float64)
        pos += nbytes
    if pos != len(data):
        raise FormatError(f"{path}: trailing bytes")
    return blobs, meta
