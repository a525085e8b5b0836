"""Tests for the LXGN checkpoint container."""
import struct
from pathlib import Path

import numpy as np
import pytest

from latxgen.core.checkpoint import (
    MAGIC,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
    with_prefix,
)
from latxgen.core.errors import CheckpointError, PrerequisiteError


@pytest.fixture
def entries() -> dict:
    return {
        "sme/conv.weight": np.arange(24, dtype=float).reshape(2, 3, 2, 2),
        "meta/theta": np.array([45.0]),
        "meta/scalar": np.array(1.5),
    }


def test_payload_layout_starts_with_magic_version_and_count(entries: dict) -> None:
    payload = encode_checkpoint(entries)
    assert payload[:4] == MAGIC
    assert struct.unpack("<II", payload[4:12]) == (1, 3)


def test_decode_preserves_names_order_shapes_and_values(entries: dict) -> None:
    decoded = decode_checkpoint(encode_checkpoint(entries))
    assert list(decoded) == list(entries)
    assert decoded["meta/scalar"].shape == ()
    np.testing.assert_array_equal(decoded["sme/conv.weight"], entries["sme/conv.weight"])


def test_decode_rejects_bad_magic_truncation_and_trailing_bytes(entries: dict) -> None:
    payload = encode_checkpoint(entries)
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"NOPE" + payload[4:])
    with pytest.raises(CheckpointError, match="truncated"):
        decode_checkpoint(payload[:-3])
    with pytest.raises(CheckpointError, match="trailing"):
        decode_checkpoint(payload + b"\x00")


def test_decode_rejects_unknown_version(entries: dict) -> None:
    payload = bytearray(encode_checkpoint(entries))
    payload[4:8] = struct.pack("<I", 9)
    with pytest.raises(CheckpointError, match="version 9"):
        decode_checkpoint(bytes(payload))


def test_save_then_load_from_disk(tmp_path: Path, entries: dict) -> None:
    path = tmp_path / "nested" / "model.lxgn"
    save_checkpoint(path, entries)
    loaded = load_checkpoint(path)
    np.testing.assert_array_equal(loaded["meta/theta"], [45.0])
    assert list(path.parent.iterdir()) == [path]


def test_load_missing_file_is_prerequisite_error(tmp_path: Path) -> None:
    with pytest.raises(PrerequisiteError, match="not found"):
        load_checkpoint(tmp_path / "absent.lxgn")


def test_with_prefix_filters_entries(entries: dict) -> None:
    assert set(with_prefix(entries, "meta/")) == {"meta/theta", "meta/scalar"}
