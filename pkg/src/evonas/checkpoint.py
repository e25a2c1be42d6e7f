"""Binary checkpoint format for named float64 arrays.

Layout: the magic string ``EVONAS1``, then one record per parameter in
insertion order:

* name length, unsigned 64-bit little-endian
* name bytes, UTF-8
* rank, unsigned 64-bit little-endian
* one extent per axis, unsigned 64-bit little-endian
* the payload, row-major float64 little-endian

Round-trips are bit-exact.
"""

import struct

import numpy as np

from evonas.errors import ContractError

MAGIC = b"EVONAS1"
_U64 = struct.Struct("<Q")


def save_checkpoint(path, named_arrays):
    """Write a mapping of name -> float64 ndarray to ``path``."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in named_arrays.items():
            arr = np.asarray(arr)
            if arr.dtype != np.float64:
                raise ContractError(
                    f"checkpoint parameter {name!r} must be float64, got {arr.dtype}")
            encoded = name.encode("utf-8")
            fh.write(_U64.pack(len(encoded)))
            fh.write(encoded)
            fh.write(_U64.pack(arr.ndim))
            for extent in arr.shape:
                fh.write(_U64.pack(extent))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into an ordered dict of name -> ndarray."""
    out = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ContractError(
                f"{path}: bad checkpoint magic {magic!r}, expected {MAGIC!r}")
        while True:
            head = fh.read(_U64.size)
            if not head:
                break
            if len(head) != _U64.size:
                raise ContractError(f"{path}: truncated record header")
            (name_len,) = _U64.unpack(head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = _U64.unpack(fh.read(_U64.size))
            shape = tuple(_U64.unpack(fh.read(_U64.size))[0] for _ in range(rank))
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = fh.read(count * 8)
            if len(payload) != count * 8:
                raise ContractError(f"{path}: truncated payload for {name!r}")
            arr = np.frombuffer(payload, dtype="<f8").astype(np.float64)
            out[name] = arr.reshape(shape)
    return out
