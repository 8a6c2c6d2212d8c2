"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic    8 bytes  b"GLMDCKPT"
    version  u32      (1)
    cfg_len  u32      length of the UTF-8 JSON config that follows
    cfg      bytes
    count    u32      number of tensors
    count x tensor:
        name_len u16, name (UTF-8)
        dtype    u8   (0 = float32, 1 = float64)
        ndim     u8,  ndim x u32 dims
        data     product(dims) little-endian values, C order

Tensors are written in sorted-name order so identical parameters always
produce identical bytes.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from ..errors import DataError
from .config import ModelConfig

MAGIC = b"GLMDCKPT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def dumps(cfg: ModelConfig, params: dict) -> bytes:
    buf = io.BytesIO()
    cfg_bytes = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(cfg_bytes)))
    buf.write(cfg_bytes)
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = np.asarray(params[name])
        code = _CODES.get(arr.dtype)
        if code is None:
            raise DataError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return buf.getvalue()


def loads(data: bytes) -> tuple[ModelConfig, dict]:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise DataError("truncated checkpoint")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(8)) != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    version, cfg_len = struct.unpack("<II", take(8))
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    try:
        cfg = ModelConfig.from_dict(json.loads(bytes(take(cfg_len)).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise DataError(f"bad checkpoint config: {exc}") from exc
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise DataError(f"tensor {name!r}: unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = _DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(take(n * dt.itemsize), dtype=dt).reshape(shape)
        params[name] = arr.astype(dt.newbyteorder("="), copy=True)
    if pos != len(view):
        raise DataError("trailing bytes after last tensor")
    return cfg, params


def save(path, cfg: ModelConfig, params: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(cfg, params))


def load(path) -> tuple[ModelConfig, dict]:
    with open(path, "rb") as fh:
        return loads(fh.read())
