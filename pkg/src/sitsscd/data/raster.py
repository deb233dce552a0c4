"""The ``SITS`` raster container.

``b"SITS" | version u8 | dtype u8 (0=f32, 1=u8) | ndim u32 | dims u32... | payload``,
all little-endian, payload row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"SITS"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODES = {np.dtype("float32"): 0, np.dtype("uint8"): 1}


def dumps_raster(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype == np.bool_:
        array = array.astype(np.uint8)
    if array.dtype not in _CODES:
        raise FormatError(f"unsupported raster dtype {array.dtype}; use float32 or uint8")
    code = _CODES[array.dtype]
    header = MAGIC + struct.pack("<BBI", VERSION, code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes()


def loads_raster(buf: bytes) -> np.ndarray:
    if len(buf) < 10:
        raise FormatError("raster header truncated", len(buf))
    if buf[:4] != MAGIC:
        raise FormatError("bad raster magic", 0)
    version, code, ndim = struct.unpack_from("<BBI", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported raster version {version}", 4)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}", 5)
    off = 10
    if len(buf) < off + 4 * ndim:
        raise FormatError("raster dims truncated", len(buf))
    dims = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    dtype = _DTYPES[code]
    need = int(np.prod(dims)) * dtype.itemsize if ndim else dtype.itemsize
    if len(buf) - off < need:
        raise FormatError(f"raster payload truncated: expected {need} bytes, found {len(buf) - off}", len(buf))
    if len(buf) - off > need:
        raise FormatError("trailing bytes after raster payload", off + need)
    arr = np.frombuffer(buf, dtype=dtype, count=need // dtype.itemsize, offset=off)
    return arr.reshape(dims).astype(dtype.newbyteorder("="))


def save_raster(path, array: np.ndarray) -> None:
    Path(path).write_bytes(dumps_raster(array))


def load_raster(path) -> np.ndarray:
    return loads_raster(Path(path).read_bytes())
