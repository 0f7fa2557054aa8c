"""Versioned binary checkpoint container.

Byte layout (everything little-endian):

    magic      4 bytes  b"ELMC"
    version    u32      currently 1
    meta_len   u64      length of the UTF-8 JSON metadata blob
    meta       bytes    {"model_config": ..., "step": ..., ...}
    n_sections u32
    per section:
        name_len  u16
        name      UTF-8 bytes
        dtype_len u8
        dtype     UTF-8 numpy dtype string, e.g. "<f8"
        ndim      u8
        dims      u64 * ndim
        data      raw array bytes, C order, little-endian

Section names are the parameter names; optimizer moments are stored under
"opt.m.<name>" / "opt.v.<name>".
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ParseError

MAGIC = b"ELMC"
VERSION = 1


def write_checkpoint(path, meta: dict, sections: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(sections)))
        for name in sorted(sections):
            arr = np.ascontiguousarray(sections[name])
            if arr.dtype.byteorder == ">":
                arr = arr.astype(arr.dtype.newbyteorder("<"))
            nb = name.encode("utf-8")
            dt = arr.dtype.str.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", len(dt)))
            f.write(dt)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<Q", d))
            f.write(arr.tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ParseError(f"{path} is not a checkpoint (bad magic)", line=0)
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ParseError(f"unsupported checkpoint version {version}", line=0)
        (meta_len,) = struct.unpack("<Q", f.read(8))
        meta = json.loads(f.read(meta_len).decode("utf-8"))
        (n_sections,) = struct.unpack("<I", f.read(4))
        sections: dict[str, np.ndarray] = {}
        for _ in range(n_sections):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (dt_len,) = struct.unpack("<B", f.read(1))
            dtype = np.dtype(f.read(dt_len).decode("utf-8"))
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            data = f.read(count * dtype.itemsize)
            sections[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    return meta, sections
