"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"HCT1"  u32 version  u32 len  config JSON
    u32 array count, then per array:
        u16 len  name (utf-8)  u8 ndim  u32 dims[ndim]  float32 data
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from hct.errors import FormatError, TaskMismatchError
from hct.model import HctConfig, HctParams, default_config

MAGIC = b"HCT1"
VERSION = 1


def dumps(params: HctParams) -> bytes:
    buf = io.BytesIO()
    cfg = params.config.to_json().encode()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(params.arrays)))
    for name, arr in params.arrays.items():
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"checkpoint truncated at byte {self.pos} (needed {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes, expected_task=None) -> HctParams:
    """Parse checkpoint bytes. ``expected_task`` may be a model task or dataset task name."""
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    version, cfg_len = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        config = HctConfig.from_dict(json.loads(r.take(cfg_len).decode()))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"unreadable checkpoint config: {exc}") from exc
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float32).reshape(shape)
        arrays[name] = arr
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after the last array")
    params = HctParams(config, arrays)
    if expected_task is not None:
        want = default_config(expected_task).task
        if want != config.task:
            raise TaskMismatchError(f"checkpoint holds a {config.task} model, expected {want}")
    return params


def save_checkpoint(params: HctParams, path) -> Path:
    path = Path(path)
    path.write_bytes(dumps(params))
    return path


def load_checkpoint(path, expected_task=None) -> HctParams:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(data, expected_task)
