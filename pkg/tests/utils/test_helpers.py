"""Tests for file, hashing and formatting helpers."""
from pathlib import Path

import numpy as np
import pytest

from latxgen.utils.helpers import (
    atomic_write_text,
    format_duration,
    format_key_values,
    load_png,
    load_png_unit,
    parse_key_values,
    read_json,
    save_png8,
    save_png16,
    sha256_bytes,
    sha256_file,
    to_uint8,
    write_json,
)


def test_atomic_write_leaves_no_temp_files(tmp_path: Path) -> None:
    path = tmp_path / "nested" / "out.txt"
    atomic_write_text(path, "first")
    atomic_write_text(path, "second")
    assert path.read_text() == "second"
    assert list(path.parent.iterdir()) == [path]


def test_json_is_canonical(tmp_path: Path) -> None:
    path = tmp_path / "data.json"
    write_json(path, {"b": 1, "a": [1, 2]})
    assert path.read_text() == '{\n  "a": [\n    1,\n    2\n  ],\n  "b": 1\n}\n'
    assert read_json(path) == {"a": [1, 2], "b": 1}


def test_file_hash_matches_bytes_hash(tmp_path: Path) -> None:
    path = tmp_path / "blob.bin"
    path.write_bytes(b"x" * 3000)
    assert sha256_file(path, chunk_size=1024) == sha256_bytes(b"x" * 3000)


def test_to_uint8_rounds_half_up_and_clips() -> None:
    np.testing.assert_array_equal(to_uint8(np.array([-0.5, 0.0, 0.5, 1.0, 2.0])), [0, 0, 128, 255, 255])


def test_png8_gray_and_rgb(tmp_path: Path) -> None:
    gray = np.linspace(0.0, 1.0, 12).reshape(3, 4)
    save_png8(tmp_path / "gray.png", gray)
    np.testing.assert_array_equal(load_png(tmp_path / "gray.png"), to_uint8(gray))
    assert np.abs(load_png_unit(tmp_path / "gray.png") - gray).max() <= 0.5 / 255 + 1e-12

    rgb = np.random.default_rng(0).uniform(size=(3, 5, 6))
    save_png8(tmp_path / "rgb.png", rgb)
    assert load_png(tmp_path / "rgb.png").shape == (3, 5, 6)


def test_identical_arrays_give_identical_png_bytes(tmp_path: Path) -> None:
    image = np.random.default_rng(1).uniform(size=(8, 8))
    save_png8(tmp_path / "a.png", image)
    save_png8(tmp_path / "b.png", image.copy())
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_png16_keeps_millimetres(tmp_path: Path) -> None:
    values = np.array([[0, 1500], [65535, 70000]])
    save_png16(tmp_path / "depth.png", values)
    np.testing.assert_array_equal(load_png(tmp_path / "depth.png"), [[0, 1500], [65535, 65535]])


@pytest.mark.parametrize("seconds,expected", [(6.24, "6.2s"), (245, "4m 05s"), (3723, "1h 02m 03s")])
def test_format_duration(seconds: float, expected: str) -> None:
    assert format_duration(seconds) == expected


def test_key_value_text() -> None:
    text = format_key_values({"tka_deg": 30.0, "seed": 4})
    assert text == "tka_deg=30.0\nseed=4\n"
    assert parse_key_values("# header\n" + text + "\nnot a pair\n a = b = c  # note\n") == {
        "tka_deg": "30.0",
        "seed": "4",
        "a": "b = c",
    }
