"""Binary checkpoint container for named parameter tensors.

Layout (all integers little-endian)::

    magic      8 bytes   b"GAGCNCKP"
    version    u32       currently 1
    meta_len   u32       length of the metadata blob
    meta       bytes     UTF-8 JSON (model config and free-form run info)
    count      u32       number of tensors
    count x:
      name_len u16
      name     bytes     UTF-8
      prec     u8        4 = binary32, 8 = binary64
      ndim     u8
      shape    u32 * ndim
      payload  prod(shape) * prec bytes, row-major, little-endian floats
    crc32      u32       zlib.crc32 of every preceding byte

Any truncation or bit flip fails the CRC and raises CheckpointError.
"""

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .decoder import GagcnModel, ModelConfig
from .exceptions import CheckpointError

MAGIC = b"GAGCNCKP"
VERSION = 1
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def dumps(tensors, meta=None):
    parts = [MAGIC, struct.pack("<I", VERSION)]
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(blob)), blob, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        code = arr.dtype.itemsize
        if arr.dtype.kind != "f" or code not in _DTYPES:
            raise CheckpointError(f"{name}: only binary32/binary64 tensors can be stored, got {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(data):
    """Parse a container; returns ``(meta, {name: array})``."""
    if len(data) < len(MAGIC) + 16 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a gagcn checkpoint (bad magic or too short)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint integrity check failed (truncated or corrupted)")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(body):
            raise CheckpointError("checkpoint ends inside a record")
        out = struct.unpack_from(fmt, body, pos)
        pos += size
        return out

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = take("<I")
    meta = json.loads(body[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = body[pos:pos + name_len].decode("utf-8")
        pos += name_len
        code, ndim = take("<BB")
        if code not in _DTYPES:
            raise CheckpointError(f"{name}: unknown precision code {code}")
        shape = take(f"<{ndim}I")
        nbytes = int(np.prod(shape, dtype=np.int64)) * code
        if pos + nbytes > len(body):
            raise CheckpointError(f"{name}: payload truncated")
        arr = np.frombuffer(body, dtype=_DTYPES[code], count=nbytes // code, offset=pos).reshape(shape)
        tensors[name] = arr.astype(_DTYPES[code].newbyteorder("="))
        pos += nbytes
    if pos != len(body):
        raise CheckpointError("trailing bytes after the last tensor")
    return meta, tensors


def save(path, tensors, meta=None):
    Path(path).write_bytes(dumps(tensors, meta))


def load(path):
    return loads(Path(path).read_bytes())


def save_model(path, model, **info):
    meta = {"model": model.config.to_dict(), **info}
    save(path, model.state_dict(), meta)


def load_model(path):
    meta, tensors = load(path)
    if "model" not in meta:
        raise CheckpointError("checkpoint carries no model configuration")
    model = GagcnModel(ModelConfig(**meta["model"]))
    model.load_state_dict(tensors)
    return model, meta
