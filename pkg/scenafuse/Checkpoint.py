"""
Flat binary parameter container ("SCNF").

Layout (little-endian): magic "SCNF", version u32, count u32, then for every
entry: name length u16, UTF-8 name, rank u8, extents as u64, float64 data
in row-major order.
"""
import logging
import os
import struct
from pathlib import Path

import numpy as np

from .Errors import FormatError
from .Tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"SCNF"
VERSION = 1

_HEADER = struct.Struct("<4sII")


def encode_checkpoint(tensors : dict) -> bytes:
    """
    Serialise named tensors (Tensor or ndarray) in insertion order

    :param tensors: name -> tensor mapping
    :type tensors: dict
    """
    chunks = [_HEADER.pack(MAGIC, VERSION, len(tensors))]
    for name, value in tensors.items():
        array = value.data if isinstance(value, Tensor) else np.asarray(value)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<B{array.ndim}Q", array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob : bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    offset = 0

    def read(fmt : str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(view):
            raise FormatError(f"truncated checkpoint at byte {offset}")
        values = struct.unpack_from(fmt, view, offset)
        offset += size
        return values

    magic, version, count = read(_HEADER.format)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")

    tensors = dict()
    for _ in range(count):
        (length,) = read("<H")
        (name,) = read(f"<{length}s")
        (rank,) = read("<B")
        shape = read(f"<{rank}Q")
        size = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + size > len(view):
            raise FormatError(f"truncated data for {name.decode('utf-8', 'replace')!r}")
        data = np.frombuffer(view, dtype="<f8", count=size // 8, offset=offset)
        offset += size
        tensors[name.decode("utf-8")] = data.astype(np.float64).reshape(shape)
    return tensors


def save_checkpoint(path, tensors : dict):
    """
    Write tensors to path; the file is replaced atomically

    :param path: Destination file
    :param tensors: name -> Tensor / ndarray
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    partial = path.with_suffix(path.suffix + ".partial")
    partial.write_bytes(encode_checkpoint(tensors))
    os.replace(partial, path)
    logger.debug("wrote %d tensors to %s", len(tensors), path)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())
