"""Read and write the .sqri / .sqim raster containers.

Both formats share a 14-byte little-endian header::

    magic   4 bytes   b"SQRI" (float32 depth) or b"SQIM" (uint16 ids)
    version uint16    currently 1
    width   uint32
    height  uint32

followed by the row-major little-endian payload (width * height
elements).  Writes go through a temp file in the same directory and an
atomic rename, so an interrupted write never leaves a torn target.
PNG previews are a lossy one-way export for human viewing and are never
read back.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC_RANGE = b"SQRI"
MAGIC_MASK = b"SQIM"
VERSION = 1

_HEADER = struct.Struct("<4sHII")

# Fixed 16-bit preview mapping: depth 0..256 -> gray 0..65535.
_PREVIEW_SCALE = 65535.0 / 256.0


class RasterFormatError(ValueError):
    """Raised for unrecognized magic/version or a corrupt payload."""


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(f"{path.name}.{os.getpid()}.tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def _write_raster(path: Path, magic: bytes, payload: np.ndarray) -> None:
    if payload.ndim != 2:
        raise ValueError(f"raster must be 2-D, got shape {payload.shape}")
    h, w = payload.shape
    header = _HEADER.pack(magic, VERSION, w, h)
    _atomic_write_bytes(path, header + payload.tobytes())


def _read_raster(path: Path, magic: bytes, dtype: str) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise RasterFormatError(f"{path}: truncated header")
    got_magic, version, w, h = _HEADER.unpack_from(data)
    if got_magic != magic:
        raise RasterFormatError(
            f"{path}: expected magic {magic!r}, found {got_magic!r}"
        )
    if version != VERSION:
        raise RasterFormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + w * h * np.dtype(dtype).itemsize
    if len(data) != expected:
        raise RasterFormatError(
            f"{path}: payload is {len(data) - _HEADER.size} bytes, "
            f"expected {expected - _HEADER.size}"
        )
    flat = np.frombuffer(data, dtype=dtype, offset=_HEADER.size)
    return flat.reshape(h, w).copy()


def write_range_raster(path: str | Path, depth: np.ndarray) -> None:
    """Write a float32 depth raster as .sqri (atomic)."""
    _write_raster(Path(path), MAGIC_RANGE, np.ascontiguousarray(depth, "<f4"))


def read_range_raster(path: str | Path) -> np.ndarray:
    """Read a .sqri file into a float32 (height, width) array."""
    return _read_raster(Path(path), MAGIC_RANGE, "<f4")


def write_mask_raster(path: str | Path, ids: np.ndarray) -> None:
    """Write a uint16 instance-id raster as .sqim (atomic)."""
    _write_raster(Path(path), MAGIC_MASK, np.ascontiguousarray(ids, "<u2"))


def read_mask_raster(path: str | Path) -> np.ndarray:
    """Read a .sqim file into a uint16 (height, width) array."""
    return _read_raster(Path(path), MAGIC_MASK, "<u2")


def write_depth_preview(path: str | Path, depth: np.ndarray) -> None:
    """16-bit grayscale PNG preview of a depth raster, mapping depth
    [0, 256] linearly onto [0, 65535]."""
    from PIL import Image

    gray = np.clip(
        np.asarray(depth, dtype=np.float64) * _PREVIEW_SCALE, 0.0, 65535.0
    ).astype(np.uint16)
    Image.fromarray(gray).save(Path(path))


def write_mask_preview(path: str | Path, ids: np.ndarray) -> None:
    """8-bit PNG preview of an instance-mask raster with one gray shade
    per instance id."""
    from PIL import Image

    ids = np.asarray(ids)
    top = max(1, int(ids.max()))
    gray = (ids.astype(np.float64) * (255.0 / top)).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(Path(path))
