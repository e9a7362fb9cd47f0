"""Binary container shared by dataset files ("DQE1") and model files ("DQM1").

Layout, all integers little-endian, no padding anywhere:

    offset  size  content
    0       4     magic, ASCII
    4       4     format version, uint32
    8       8     header length H in bytes, uint64
    16      H     UTF-8 JSON header, keys sorted
    16+H    ...   arrays, raw float64 little-endian, C order, in the order
                  listed by header["arrays"]

``header["arrays"]`` is a list of {"name": str, "shape": [int, ...]}.  The
file size is therefore exactly 16 + H + 8 * sum(prod(shape)).
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    FormatError,
    ShapeMismatchError,
    TruncatedFileError,
    UnsupportedVersionError,
)

FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_F64 = np.dtype("<f8")


def encode(magic: bytes, header: dict, arrays: list[tuple[str, np.ndarray]]) -> bytes:
    """Serialize; ``header`` must not contain the key "arrays"."""
    if "arrays" in header:
        raise ValueError('"arrays" is reserved in the container header')
    table = []
    blobs = []
    for name, a in arrays:
        a = np.asarray(a)
        if a.dtype.kind not in "fiu":
            raise TypeError(f"array {name!r} has non-real dtype {a.dtype}")
        table.append({"name": name, "shape": list(a.shape)})
        blobs.append(np.ascontiguousarray(a, dtype=_F64).tobytes())
    text = json.dumps({**header, "arrays": table}, sort_keys=True, allow_nan=False).encode("utf-8")
    return _PREFIX.pack(magic, FORMAT_VERSION, len(text)) + text + b"".join(blobs)


def decode(data: bytes, magic: bytes, source: str = "<bytes>") -> tuple[dict, dict[str, np.ndarray]]:
    """Inverse of ``encode``; returns (header without "arrays", name -> array)."""
    if len(data) < _PREFIX.size:
        raise TruncatedFileError(f"{source}: {len(data)} bytes is shorter than the fixed prefix")
    got_magic, version, hlen = _PREFIX.unpack_from(data)
    if got_magic != magic:
        raise BadMagicError(f"{source}: magic {got_magic!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{source}: format version {version} (supported: {FORMAT_VERSION})")
    body = _PREFIX.size + hlen
    if len(data) < body:
        raise TruncatedFileError(f"{source}: header runs past end of file")
    try:
        header = json.loads(data[_PREFIX.size:body].decode("utf-8"))
        table = header.pop("arrays")
        shapes = [(str(e["name"]), tuple(int(n) for n in e["shape"])) for e in table]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{source}: malformed header ({exc})") from exc
    if any(n < 0 for _, s in shapes for n in s):
        raise ShapeMismatchError(f"{source}: negative dimension in array table")
    expected = body + 8 * sum(math.prod(s) for _, s in shapes)
    if len(data) < expected:
        raise TruncatedFileError(f"{source}: {len(data)} bytes, header describes {expected}")
    if len(data) > expected:
        raise FormatError(f"{source}: {len(data) - expected} trailing bytes after the last array")
    arrays: dict[str, np.ndarray] = {}
    pos = body
    for name, shape in shapes:
        if name in arrays:
            raise FormatError(f"{source}: duplicate array name {name!r}")
        count = math.prod(shape)
        a = np.frombuffer(data, dtype=_F64, count=count, offset=pos).reshape(shape)
        arrays[name] = a.astype(np.float64)  # native-order, writable copy
        pos += 8 * count
    return header, arrays


def write(path, magic: bytes, header: dict, arrays) -> None:
    Path(path).write_bytes(encode(magic, header, arrays))


def read(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes(), magic, str(path))


def expect_shape(arrays: dict, name: str, shape: tuple, source: str = "") -> np.ndarray:
    """Fetch an array and check its shape against what the header implies."""
    if name not in arrays:
        raise ShapeMismatchError(f"{source}: missing array {name!r}")
    a = arrays[name]
    if a.shape != tuple(shape):
        raise ShapeMismatchError(f"{source}: array {name!r} has shape {a.shape}, expected {tuple(shape)}")
    return a
