"""Versioned binary checkpoint container.

Byte layout (little-endian), documented for external readers:

    magic        8 bytes  b"UVRCKPT1"
    format u32   currently 1
    hash         32 bytes (sha256 of the canonical run config)
    count u32    number of named arrays
    per array:
      name_len u16, name utf-8 bytes
      dtype    u8  (0 float64, 1 float32, 2 int64)
      ndim     u8, dims u32 x ndim
      data     raw C-order little-endian bytes

Round-trips are bit-identical.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"UVRCKPT1"
FORMAT_VERSION = 1

_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1, np.dtype(np.int64): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def save_arrays(path: str, config_hash: bytes, arrays: dict[str, np.ndarray]) -> None:
    if len(config_hash) != 32:
        raise ValueError("config hash must be 32 bytes")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    blob += config_hash
    blob += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        src = np.asarray(arr)
        a = np.ascontiguousarray(src)  # promotes 0-d to 1-d; keep src.shape
        if a.dtype not in _DTYPE_CODES:
            raise ValueError(f"unsupported dtype {a.dtype} for {name!r}")
        nm = name.encode("utf8")
        blob += struct.pack("<H", len(nm)) + nm
        blob += struct.pack("<BB", _DTYPE_CODES[a.dtype], src.ndim)
        blob += struct.pack(f"<{src.ndim}I", *src.shape) if src.ndim else b""
        blob += a.astype(a.dtype.newbyteorder("<")).tobytes(order="C")
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load_arrays(path: str) -> tuple[bytes, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise ValueError("not a checkpoint file")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {version}")
    config_hash = data[12:44]
    (count,) = struct.unpack_from("<I", data, 44)
    off = 48
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + name_len].decode("utf8")
        off += name_len
        code, ndim = struct.unpack_from("<BB", data, off)
        off += 2
        dims = struct.unpack_from(f"<{ndim}I", data, off) if ndim else ()
        off += 4 * ndim
        dtype = _CODE_DTYPES[code]
        n = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(data, dtype=dtype.newbyteorder("<"), count=n, offset=off)
        arrays[name] = arr.astype(dtype).reshape(dims).copy()
        off += n * dtype.itemsize
    return config_hash, arrays
