"""Flat named-array container ("LXGN" checkpoint files).

Layout (little-endian)::

    b"LXGN"  u32 version  u32 count
    repeat count times:
        u32 name_len  name (UTF-8)  u32 rank  rank * u64 dims  float64 payload
"""
from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from ..utils.helpers import atomic_write_bytes
from .errors import CheckpointError, PrerequisiteError

logger = logging.getLogger(__name__)

MAGIC = b"LXGN"
VERSION = 1


def encode_checkpoint(entries: Mapping[str, np.ndarray]) -> bytes:
    """Serialise ``entries`` in their iteration order."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, array in entries.items():
        raw_name = name.encode("utf-8")
        array = np.asarray(array, dtype="<f8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(np.ascontiguousarray(array).tobytes())
    return b"".join(parts)


def decode_checkpoint(payload: bytes) -> Dict[str, np.ndarray]:
    """Parse a checkpoint payload back into an ordered dict of arrays.

    Raises:
        CheckpointError: on bad magic, unknown version or truncation.
    """
    view = memoryview(payload)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    offset = 4

    def take(n: int) -> memoryview:
        nonlocal offset
        if offset + n > len(view):
            raise CheckpointError(f"checkpoint truncated at byte {offset}")
        chunk = view[offset : offset + n]
        offset += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    entries: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank)) if rank else ()
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(bytes(take(8 * size)), dtype="<f8").astype(np.float64)
        entries[name] = data.reshape(shape)
    if offset != len(view):
        raise CheckpointError(f"{len(view) - offset} trailing bytes after {count} entries")
    return entries


def save_checkpoint(path: Path, entries: Mapping[str, np.ndarray]) -> None:
    atomic_write_bytes(Path(path), encode_checkpoint(entries))
    logger.info(f"Saved checkpoint {path} ({len(entries)} entries)")


def load_checkpoint(path: Path) -> Dict[str, np.ndarray]:
    """Read a checkpoint file.

    Raises:
        PrerequisiteError: if the file does not exist.
        CheckpointError: if it is malformed.
    """
    path = Path(path)
    if not path.exists():
        raise PrerequisiteError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def with_prefix(entries: Mapping[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    """Entries whose name starts with ``prefix``, with the prefix kept."""
    return {k: v for k, v in entries.items() if k.startswith(prefix)}
