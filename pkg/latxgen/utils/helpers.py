"""Helper utilities: hashing, atomic writes, image files and small formatters."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict

import numpy as np
from PIL import Image


# ---------------------------------------------------------------------------
# Atomic writes
# ---------------------------------------------------------------------------


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` through a temp file in the same directory.

    A crash mid-write leaves any existing file untouched.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp_path, path)
    except Exception:
        try:
            os.unlink(tmp_path)
        except OSError:
            pass
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    """Canonical JSON (sorted keys, indent 2, trailing newline)."""
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> Dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Hashing
# ---------------------------------------------------------------------------


def sha256_bytes(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def sha256_file(path: Path, chunk_size: int = 1 << 20) -> str:
    """Hex SHA-256 of a file's content."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Image files
# ---------------------------------------------------------------------------


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Map [0,1] floats to 0..255 with round-half-up; values are clipped first."""
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_png8(path: Path, image: np.ndarray) -> None:
    """Save a [H,W] or [3,H,W] float image in [0,1] as an 8-bit PNG.

    PNG metadata is left empty so identical arrays give identical bytes.
    """
    image = np.asarray(image)
    if image.ndim == 3:
        pixels = np.moveaxis(to_uint8(image), 0, -1)
        pil = Image.fromarray(np.ascontiguousarray(pixels), mode="RGB")
    else:
        pil = Image.fromarray(to_uint8(image), mode="L")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")


def save_png16(path: Path, values: np.ndarray) -> None:
    """Save an integer [H,W] array (0..65535) as a 16-bit grayscale PNG."""
    values = np.clip(np.asarray(values), 0, 65535).astype(np.uint16)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(values).save(path, format="PNG")


def load_png(path: Path) -> np.ndarray:
    """Load a PNG as a raw integer array: [H,W] for grayscale, [3,H,W] for RGB."""
    with Image.open(path) as img:
        if img.mode in ("RGB", "RGBA"):
            return np.moveaxis(np.asarray(img.convert("RGB")), -1, 0).copy()
        return np.asarray(img).copy()


def load_png_unit(path: Path) -> np.ndarray:
    """Load an 8-bit PNG as float64 in [0,1]."""
    return load_png(path).astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# Formatting
# ---------------------------------------------------------------------------


def format_duration(seconds: float) -> str:
    """Format seconds as e.g. '1h 02m 03s', '4m 05s' or '6.2s'."""
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes, secs = divmod(int(round(seconds)), 60)
    hours, minutes = divmod(minutes, 60)
    if hours:
        return f"{hours}h {minutes:02d}m {secs:02d}s"
    return f"{minutes}m {secs:02d}s"


def format_key_values(values: Dict[str, Any]) -> str:
    """Render ``key=value`` lines in insertion order."""
    return "".join(f"{key}={value}\n" for key, value in values.items())


def parse_key_values(text: str) -> Dict[str, str]:
    """Parse ``key=value`` lines, ignoring blanks and ``#`` comments (also trailing ones)."""
    out: Dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            continue
        out[key.strip()] = value.strip()
    return out
