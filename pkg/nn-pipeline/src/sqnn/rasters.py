"""Reader/writer for the .sqri/.sqim raster containers the dataset
toolkit emits: a 14-byte little-endian header (magic, u16 version, u32
width, u32 height) followed by the row-major payload (float32 depth for
SQRI, uint16 instance ids for SQIM)."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_HEADER = struct.Struct("<4sHII")
_VERSION = 1
_SPECS = {b"SQRI": "<f4", b"SQIM": "<u2"}


def _read(path: Path, magic: bytes) -> np.ndarray:
    data = Path(path).read_bytes()
    got, version, w, h = _HEADER.unpack_from(data)
    if got != magic or version != _VERSION:
        raise ValueError(f"{path}: unexpected header {got!r} v{version}")
    dtype = _SPECS[magic]
    expected = _HEADER.size + w * h * np.dtype(dtype).itemsize
    if len(data) != expected:
        raise ValueError(f"{path}: bad payload size")
    return np.frombuffer(data, dtype=dtype, offset=_HEADER.size) \
        .reshape(h, w).copy()


def _write(path: Path, magic: bytes, raster: np.ndarray) -> None:
    raster = np.ascontiguousarray(raster, dtype=_SPECS[magic])
    h, w = raster.shape
    Path(path).write_bytes(
        _HEADER.pack(magic, _VERSION, w, h) + raster.tobytes()
    )


def read_depth(path: str | Path) -> np.ndarray:
    return _read(Path(path), b"SQRI")


def write_depth(path: str | Path, depth: np.ndarray) -> None:
    _write(Path(path), b"SQRI", depth)


def read_ids(path: str | Path) -> np.ndarray:
    return _read(Path(path), b"SQIM")


def write_ids(path: str | Path, ids: np.ndarray) -> None:
    _write(Path(path), b"SQIM", ids)
