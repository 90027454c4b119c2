"""Portable tensor files (``.srtn``).

Layout, all little-endian::

    b"SRTN"  u8 version (=1)  u8 dtype  u8 ndim  ndim x u32 dims  payload

dtype codes: 1 = float32, 2 = float64, 3 = uint16.  The payload is the
row-major array.  Writing then reading is bit-exact.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"SRTN"
VERSION = 1
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<u2")}
_CODE_OF = {v.str: k for k, v in DTYPE_CODES.items()}


def encode(arr) -> bytes:
    arr = np.asarray(arr)
    code = _CODE_OF.get(arr.dtype.newbyteorder("<").str)
    if code is None:
        raise FormatError(f"dtype {arr.dtype} is not storable (float32, float64, uint16)")
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise FormatError("not a portable tensor file (bad magic)")
    version, code, ndim = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported tensor file version {version}")
    if code not in DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}")
    off = 7 + 4 * ndim
    if len(buf) < off:
        raise FormatError("truncated tensor header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 7)
    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) - off != expected:
        raise FormatError(f"payload is {len(buf) - off} bytes, header implies {expected}")
    return np.frombuffer(buf, dtype=dtype, offset=off).reshape(dims).copy()


def write_tensor(path, arr) -> None:
    data = encode(arr)
    tmp = f"{path}.part"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())
