"""Binary tensor files.

Layout: ``b"STFT"``, u8 dtype code, u8 rank, ``rank`` little-endian u32
dims, then the little-endian row-major payload.
"""

from __future__ import annotations

import math
import os
import struct

import numpy as np

MAGIC = b"STFT"
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CODE_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class TensorFileError(IOError):
    """Unreadable, truncated or malformed tensor file."""


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype not in CODE_OF:
        arr = arr.astype(np.float32)
    if arr.ndim > 255:
        raise ValueError("rank too large")
    code = CODE_OF[arr.dtype]
    header = MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes()


def decode_tensor(buf: bytes, where: str = "<bytes>") -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise TensorFileError(f"{where}: bad magic")
    code, rank = struct.unpack_from("<BB", buf, 4)
    if code not in DTYPE_CODES:
        raise TensorFileError(f"{where}: unknown dtype code {code}")
    if len(buf) < 6 + 4 * rank:
        raise TensorFileError(f"{where}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, 6)
    dtype = DTYPE_CODES[code]
    count = math.prod(dims)
    start = 6 + 4 * rank
    expected = start + count * dtype.itemsize
    if len(buf) != expected:
        raise TensorFileError(f"{where}: corrupt file, expected {expected} bytes, found {len(buf)}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=start).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def save_tensor(path: str | os.PathLike, arr) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(arr))


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise TensorFileError(f"{path}: {exc.strerror or exc}") from exc
    return decode_tensor(buf, str(path))
