"""Binary checkpoint serialization for model parameters and arrays.

A checkpoint stores a model kind tag plus an ordered set of named float
tensors in a compact binary container.  The layout, all little-endian:

    offset  size  field
    0       4     magic bytes b"SGNC"
    4       4     format version (u32), currently 1
    8       4     kind tag length (u32)
    12      k     kind tag, UTF-8
    .       4     tensor count (u32)
    per tensor:
            4     name length (u32)
            n     name, UTF-8
            1     dtype tag (u8): 0 = float32, 1 = float64
            1     rank (u8)
            8*r   extents (u64 each)
            .     payload, raw little-endian floats, C order
    end     8     FNV-1a 64-bit checksum of every preceding byte (u64)

Writes go through a temporary file in the destination directory followed
by os.replace, so a crash mid-write never leaves a truncated checkpoint
behind.  Loads verify the magic, version, and checksum before returning
and round-trip every tensor bitwise.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import FormatError, ParameterError

MAGIC = b"SGNC"
FORMAT_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def fnv1a_64(data: bytes) -> int:
    """FNV-1a 64-bit hash of a byte string."""
    acc = _FNV_OFFSET
    for byte in data:
        acc ^= byte
        acc = (acc * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return acc


def _encode_tensor(name: str, array: np.ndarray) -> bytes:
    dtype = np.dtype(array.dtype)
    if dtype not in _DTYPE_TAGS:
        raise ParameterError(
            f"checkpoint tensors must be float32 or float64, got {dtype} for {name!r}"
        )
    if array.ndim > 255:
        raise ParameterError(f"tensor rank {array.ndim} exceeds format limit 255")
    name_bytes = name.encode("utf-8")
    parts = [struct.pack("<I", len(name_bytes)), name_bytes]
    parts.append(struct.pack("<BB", _DTYPE_TAGS[dtype], array.ndim))
    for extent in array.shape:
        parts.append(struct.pack("<Q", extent))
    little = array.astype(dtype.newbyteorder("<"), copy=False)
    parts.append(np.ascontiguousarray(little).tobytes())
    return b"".join(parts)


def save_checkpoint(path: str, kind: str, tensors: dict) -> None:
    """Serialize named float arrays to ``path`` atomically.

    Entries keep the dictionary's iteration order.  Values may be numpy
    arrays or anything np.asarray accepts that is already float32/float64.
    """
    if not kind:
        raise ParameterError("checkpoint kind tag must be non-empty")
    kind_bytes = kind.encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    parts.append(struct.pack("<I", len(kind_bytes)))
    parts.append(kind_bytes)
    parts.append(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        parts.append(_encode_tensor(name, np.asarray(value)))
    body = b"".join(parts)
    blob = body + struct.pack("<Q", fnv1a_64(body))

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(blob)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


class _Reader:
    """Cursor over a checkpoint byte string with truncation reporting."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        end = self.pos + count
        if end > len(self.blob):
            raise FormatError(
                f"checkpoint truncated reading {what}: "
                f"expected {end} bytes, file has {len(self.blob)}"
            )
        chunk = self.blob[self.pos : end]
        self.pos = end
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def load_checkpoint(path: str):
    """Read a checkpoint, returning ``(kind, tensors)``.

    The checksum is verified against the file contents before any tensor
    is returned; a corrupted or truncated file raises FormatError.
    """
    with open(path, "rb") as handle:
        blob = handle.read()
    if len(blob) < len(MAGIC) + 4 + 8:
        raise FormatError(
            f"checkpoint too short: expected at least 16 bytes, file has {len(blob)}"
        )
    body, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    actual = fnv1a_64(body)
    if actual != stored:
        raise FormatError(
            f"checkpoint checksum mismatch: stored {stored:#018x}, "
            f"computed {actual:#018x}"
        )

    reader = _Reader(body)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic: expected {MAGIC!r}, got {magic!r}")
    version = reader.u32("format version")
    if version != FORMAT_VERSION:
        raise FormatError(
            f"unsupported checkpoint format version {version}, expected {FORMAT_VERSION}"
        )
    kind_len = reader.u32("kind length")
    kind = reader.take(kind_len, "kind tag").decode("utf-8")
    count = reader.u32("tensor count")

    tensors = {}
    for index in range(count):
        name_len = reader.u32(f"name length of tensor {index}")
        name = reader.take(name_len, f"name of tensor {index}").decode("utf-8")
        tag_rank = reader.take(2, f"dtype/rank of {name!r}")
        tag, rank = tag_rank[0], tag_rank[1]
        if tag not in _TAG_DTYPES:
            raise FormatError(f"unknown dtype tag {tag} for tensor {name!r}")
        shape = tuple(reader.u64(f"extent of {name!r}") for _ in range(rank))
        dtype = _TAG_DTYPES[tag]
        n_items = 1
        for extent in shape:
            n_items *= extent
        payload = reader.take(n_items * dtype.itemsize, f"payload of {name!r}")
        array = np.frombuffer(payload, dtype=dtype).reshape(shape)
        tensors[name] = array.astype(dtype.newbyteorder("="))
    if reader.pos != len(body):
        raise FormatError(
            f"checkpoint has {len(body) - reader.pos} trailing bytes after last tensor"
        )
    return kind, tensors
