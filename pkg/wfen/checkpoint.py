"""
Binary checkpoint format

Layout (all integers unsigned 64-bit little-endian):

    b"WFEN1"
    config_len, config text (utf-8, the run config echoed verbatim)
    entry_count
    per entry: name_len, name (utf-8), rank, extents[rank], values (float32 LE, C order)

Decoding is strict: a wrong magic, a short read anywhere, or bytes left over
after the last entry raise FormatError.
"""

import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Tuple, Union

import numpy as np

from .errors import FormatError
from .utils import logger

MAGIC = b"WFEN1"
_U64 = struct.Struct("<Q")


@dataclass
class Checkpoint:
    config_text: str
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)


def encode_checkpoint(tensors: Mapping[str, np.ndarray], config_text: str = "") -> bytes:
    config_bytes = config_text.encode("utf-8")
    parts = [MAGIC, _U64.pack(len(config_bytes)), config_bytes, _U64.pack(len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array)
        name_bytes = name.encode("utf-8")
        parts.append(_U64.pack(len(name_bytes)))
        parts.append(name_bytes)
        parts.append(_U64.pack(array.ndim))
        parts.extend(_U64.pack(extent) for extent in array.shape)
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, payload: bytes, source: str):
        self.payload = payload
        self.pos = 0
        self.source = source

    def take(self, count: int, what: str) -> bytes:
        end = self.pos + count
        if end > len(self.payload):
            raise FormatError(
                f"{self.source}: truncated checkpoint while reading {what} "
                f"(need {count} bytes at offset {self.pos}, {len(self.payload) - self.pos} left)"
            )
        chunk = self.payload[self.pos : end]
        self.pos = end
        return chunk

    def u64(self, what: str) -> int:
        return _U64.unpack(self.take(_U64.size, what))[0]


def decode_checkpoint(payload: bytes, source: str = "memory") -> Checkpoint:
    """
    Parse checkpoint bytes

    Raises:
        FormatError: on bad magic, truncation, undecodable text or trailing bytes
    """
    reader = _Reader(payload, source)
    magic = reader.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise FormatError(f"{source}: bad checkpoint magic {magic!r}, expected {MAGIC!r}")

    try:
        config_text = reader.take(reader.u64("config length"), "config").decode("utf-8")
        count = reader.u64("entry count")
        tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for index in range(count):
            name = reader.take(reader.u64(f"entry {index} name length"), f"entry {index} name")
            name = name.decode("utf-8")
            rank = reader.u64(f"{name} rank")
            if rank > 8:
                raise FormatError(f"{source}: implausible rank {rank} for {name}")
            shape: Tuple[int, ...] = tuple(reader.u64(f"{name} extent") for _ in range(rank))
            size = math.prod(shape)
            raw = reader.take(4 * size, f"{name} values")
            if name in tensors:
                raise FormatError(f"{source}: duplicate entry {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    except UnicodeDecodeError as e:
        raise FormatError(f"{source}: invalid utf-8 text in checkpoint: {e}") from e

    if reader.pos != len(payload):
        raise FormatError(
            f"{source}: {len(payload) - reader.pos} unexpected trailing bytes after last entry"
        )
    return Checkpoint(config_text, tensors)


def save_checkpoint(
    path: Union[str, Path], tensors: Mapping[str, np.ndarray], config_text: str = ""
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(tensors, config_text))
    logger.info(f"Saved checkpoint with {len(tensors)} tensors to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    checkpoint = decode_checkpoint(path.read_bytes(), str(path))
    logger.debug(f"Loaded {len(checkpoint.tensors)} tensors from {path}")
    return checkpoint
