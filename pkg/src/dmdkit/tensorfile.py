"""Binary tensor container used to pass arrays between CLI stages.

Layout: magic ``DMD1``, element-type code (u8: 0 = float32, 1 = uint32),
rank (u32 LE), one u32 LE per dimension, then the payload row-major in
little-endian element order.  Round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"DMD1"

_CODE_F32 = 0
_CODE_U32 = 1

_DTYPES = {_CODE_F32: np.dtype("<f4"), _CODE_U32: np.dtype("<u4")}


def tensor_bytes(arr: np.ndarray) -> bytes:
    """Serialize an array to the container layout.

    Floating arrays are stored as float32, integer arrays as uint32.
    Integer values outside [0, 2**32) are rejected rather than wrapped.
    """
    arr = np.atleast_1d(np.asarray(arr))
    if arr.dtype.kind == "f":
        code = _CODE_F32
    elif arr.dtype.kind in "iu":
        if arr.size and (arr.min() < 0 or arr.max() > 0xFFFFFFFF):
            raise ValidationError("integer tensor values do not fit in uint32")
        code = _CODE_U32
    else:
        raise ValidationError(f"unsupported tensor dtype {arr.dtype}")
    payload = np.ascontiguousarray(arr).astype(_DTYPES[code]).tobytes()
    header = MAGIC + struct.pack("<BI", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + payload


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_bytes(arr))


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < 9:
        raise FormatError("tensor blob shorter than fixed header")
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    code, rank = struct.unpack_from("<BI", blob, 4)
    if code not in _DTYPES:
        raise FormatError(f"unknown element-type code {code}")
    offset = 9
    if len(blob) < offset + 4 * rank:
        raise FormatError("tensor blob truncated inside dimension list")
    dims = struct.unpack_from(f"<{rank}I", blob, offset)
    offset += 4 * rank
    dtype = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = count * dtype.itemsize
    if len(blob) - offset != expected:
        raise FormatError(
            f"payload length {len(blob) - offset} does not match "
            f"{expected} bytes implied by dims {dims}"
        )
    flat = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    return flat.reshape(dims).copy()


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())
