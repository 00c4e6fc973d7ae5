"""Binary tensor container.

Layout (all integers little-endian)::

    b"TNSR" | u32 version | u64 header_len | JSON header | raw payload

The JSON header is ``{"dtype": "f32"|"i32", "shape": [...], "order": "row-major"}``.
Every tensor in the pipeline (embeddings, masks, labels, depth, parameters)
uses this one container.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

MAGIC = b"TNSR"
VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")

DTYPES = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4")}
_MAX_EXTENT = 2**63 - 1

PathLike = Union[str, os.PathLike]


class TensorFormatError(ValueError):
    """Base class for malformed tensor files or payloads."""


class BadMagicError(TensorFormatError):
    pass


class VersionError(TensorFormatError):
    pass


class TruncatedError(TensorFormatError):
    pass


class ShapeMismatchError(TensorFormatError):
    pass


@dataclass(frozen=True)
class TensorFile:
    dtype: str
    shape: tuple
    data: bytes

    def to_numpy(self) -> np.ndarray:
        arr = np.frombuffer(self.data, dtype=DTYPES[self.dtype])
        return arr.reshape(self.shape).copy()


def _check_shape(shape: Sequence[int]) -> tuple:
    shape = tuple(int(s) for s in shape)
    if len(shape) < 1:
        raise ShapeMismatchError("tensor rank must be >= 1")
    for s in shape:
        if s < 0 or s > _MAX_EXTENT:
            raise ShapeMismatchError(f"invalid extent {s} in shape {shape}")
    return shape


def _nbytes(dtype: str, shape: tuple) -> int:
    n = 1
    for s in shape:
        n *= s
    return n * DTYPES[dtype].itemsize


def _encode_payload(dtype: str, payload) -> bytes:
    if isinstance(payload, (bytes, bytearray, memoryview)):
        return bytes(payload)
    arr = np.asarray(payload)
    return np.ascontiguousarray(arr, dtype=DTYPES[dtype]).tobytes()


def encode_tensor(dtype: str, shape: Sequence[int], payload) -> bytes:
    if dtype not in DTYPES:
        raise TensorFormatError(f"unsupported dtype {dtype!r}; expected one of {sorted(DTYPES)}")
    shape = _check_shape(shape)
    data = _encode_payload(dtype, payload)
    expected = _nbytes(dtype, shape)
    if len(data) != expected:
        raise ShapeMismatchError(
            f"payload has {len(data)} bytes but shape {list(shape)} of {dtype} needs {expected}"
        )
    header = json.dumps(
        {"dtype": dtype, "shape": list(shape), "order": "row-major"}, separators=(",", ":")
    ).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, VERSION, len(header)) + header + data


def decode_tensor(blob: bytes) -> TensorFile:
    if len(blob) < _PREAMBLE.size:
        raise TruncatedError("file shorter than the fixed preamble")
    magic, version, header_len = _PREAMBLE.unpack_from(blob, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionError(f"unsupported version {version}, expected {VERSION}")
    start = _PREAMBLE.size
    if len(blob) < start + header_len:
        raise TruncatedError("header truncated")
    try:
        header = json.loads(blob[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TensorFormatError(f"unreadable header: {exc}") from exc
    dtype = header.get("dtype")
    if dtype not in DTYPES:
        raise TensorFormatError(f"unsupported dtype {dtype!r}")
    if header.get("order", "row-major") != "row-major":
        raise TensorFormatError(f"unsupported order {header.get('order')!r}")
    shape = _check_shape(header.get("shape", []))
    data = blob[start + header_len :]
    expected = _nbytes(dtype, shape)
    if len(data) < expected:
        raise TruncatedError(f"payload truncated: {len(data)} of {expected} bytes")
    if len(data) > expected:
        raise ShapeMismatchError(f"{len(data) - expected} trailing bytes after payload")
    return TensorFile(dtype=dtype, shape=shape, data=bytes(data))


def write_tensor(path: PathLike, dtype: str, shape: Sequence[int], payload) -> None:
    """Write a tensor file; ``payload`` is raw bytes or anything numpy can coerce."""
    blob = encode_tensor(dtype, shape, payload)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(blob)


def read_tensor(path: PathLike) -> TensorFile:
    with open(path, "rb") as f:
        return decode_tensor(f.read())


def save_array(path: PathLike, arr: np.ndarray) -> None:
    """Write a numpy array, picking f32 for floats and i32 for integers/bools."""
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        dtype = "f32"
    elif arr.dtype.kind in "iub":
        dtype = "i32"
    else:
        raise TensorFormatError(f"cannot store array of dtype {arr.dtype}")
    if arr.ndim == 0:
        arr = arr.reshape(1)
    write_tensor(path, dtype, arr.shape, arr)


def load_array(path: PathLike) -> np.ndarray:
    return read_tensor(path).to_numpy()
