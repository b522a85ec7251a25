"""Binary checkpoint container.

Layout: magic ``GDMAE\\x00\\x01`` (the final byte is the format version),
then one record per array: u32 name length, UTF-8 name, u8 dtype code
(0 = float64), u8 ndim, u64 dims, little-endian payload. Everything,
including optimizer moments and counters, is stored as float64 arrays so a
round trip is bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC_PREFIX = b"GDMAE\x00"
VERSION = 1
DTYPE_F64 = 0


class CheckpointError(ValueError):
    """Base class for checkpoint container problems."""


class NotACheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class UnknownArrayError(CheckpointError):
    pass


def save_arrays(path: str, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC_PREFIX + bytes([VERSION]))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", DTYPE_F64, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedCheckpointError(f"checkpoint truncated while reading {what}")
    return buf


def load_arrays(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        head = f.read(7)
        if len(head) < 7 or head[:6] != MAGIC_PREFIX:
            raise NotACheckpointError(f"{path}: not a checkpoint (bad magic)")
        if head[6] != VERSION:
            raise CheckpointVersionError(f"{path}: unsupported checkpoint version {head[6]}")
        arrays: dict[str, np.ndarray] = {}
        while True:
            raw = f.read(4)
            if not raw:
                return arrays
            if len(raw) != 4:
                raise TruncatedCheckpointError("checkpoint truncated while reading record header")
            (name_len,) = struct.unpack("<I", raw)
            name = _read_exact(f, name_len, "array name").decode("utf-8")
            dtype_code, ndim = struct.unpack("<BB", _read_exact(f, 2, "dtype/ndim"))
            if dtype_code != DTYPE_F64:
                raise CheckpointError(f"{name}: unsupported dtype code {dtype_code}")
            dims = struct.unpack(f"<{ndim}Q", _read_exact(f, 8 * ndim, "dims"))
            count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            payload = _read_exact(f, 8 * count, f"payload of {name}")
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
