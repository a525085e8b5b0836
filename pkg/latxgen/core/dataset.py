"""On-disk sample format, corpus manifests and network-ready batches.

Each sample directory holds::

    rgb.png                 8-bit posterior colour image
    depth.png               16-bit depth in millimetres (0 = invalid)
    landmarks.txt           name x y z   (metres, camera space)
    meta.txt                key=value intrinsics and theta
    curve.png, xray.png     8-bit lateral curve map and radiograph
    spec.txt                key=value phantom spec
    lateral_landmarks.txt   name row col on the lateral images
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..utils.helpers import (
    atomic_write_text,
    format_key_values,
    load_png,
    load_png_unit,
    parse_key_values,
    read_json,
    save_png8,
    save_png16,
    write_json,
)
from .errors import GeometryError, PrerequisiteError
from .geometry import CameraIntrinsics, LandmarkSet3D, RGBDFrame, transform_frame
from .phantom import LATERAL_POINT_NAMES, PhantomSpec

logger = logging.getLogger(__name__)

MANIFEST_NAME = "corpus.json"


# ---------------------------------------------------------------------------
# Frame files
# ---------------------------------------------------------------------------


def save_frame(directory: Path, frame: RGBDFrame) -> None:
    """Write the frame-on-disk files (rgb, depth, landmarks, meta)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_png8(directory / "rgb.png", frame.rgb * frame.valid[None])
    depth_mm = np.where(frame.valid, np.floor(frame.depth * 1000.0 + 0.5), 0)
    save_png16(directory / "depth.png", depth_mm)
    lines = [
        f"{name} {x!r} {y!r} {z!r}\n"
        for name, (x, y, z) in zip(frame.landmarks.names, frame.landmarks.points.tolist())
    ]
    atomic_write_text(directory / "landmarks.txt", "".join(lines))
    meta = dict(frame.intrinsics.as_dict())
    meta["theta"] = frame.theta
    atomic_write_text(directory / "meta.txt", format_key_values(meta))


def load_frame(directory: Path) -> RGBDFrame:
    """Read a frame written by :func:`save_frame`.

    Raises:
        GeometryError: if the files disagree with each other.
        OSError: if a file is missing or unreadable.
    """
    directory = Path(directory)
    meta = parse_key_values((directory / "meta.txt").read_text(encoding="utf-8"))
    try:
        intrinsics = CameraIntrinsics(
            fx=float(meta["fx"]),
            fy=float(meta["fy"]),
            cx=float(meta["cx"]),
            cy=float(meta["cy"]),
            width=int(meta["width"]),
            height=int(meta["height"]),
        )
    except KeyError as e:
        raise GeometryError(f"{directory / 'meta.txt'} is missing key {e}") from None
    names, points = [], []
    for line in (directory / "landmarks.txt").read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if len(parts) == 4:
            names.append(parts[0])
            points.append([float(v) for v in parts[1:]])
    depth = load_png(directory / "depth.png").astype(np.float64) / 1000.0
    return RGBDFrame(
        rgb=load_png_unit(directory / "rgb.png"),
        depth=depth,
        intrinsics=intrinsics,
        landmarks=LandmarkSet3D(np.asarray(points), tuple(names)),
        theta=float(meta.get("theta", 0.0)),
    )


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------


@dataclass
class LoadedSample:
    """One sample as read back from disk."""

    sample_id: str
    frame: RGBDFrame
    curve: np.ndarray
    radiograph: np.ndarray
    points: np.ndarray
    spec: PhantomSpec


def write_sample(directory: Path, sample) -> None:
    """Write a generated phantom sample (anything with frame/curve/radiograph/points/spec)."""
    directory = Path(directory)
    save_frame(directory, sample.frame)
    save_png8(directory / "curve.png", sample.curve)
    save_png8(directory / "xray.png", sample.radiograph)
    atomic_write_text(directory / "spec.txt", format_key_values(sample.spec.as_dict()))
    rows = [
        f"{name} {r!r} {c!r}\n" for name, (r, c) in zip(LATERAL_POINT_NAMES, np.asarray(sample.points).tolist())
    ]
    atomic_write_text(directory / "lateral_landmarks.txt", "".join(rows))


def read_spec(path: Path) -> PhantomSpec:
    values = parse_key_values(Path(path).read_text(encoding="utf-8"))
    return PhantomSpec(
        tka_deg=float(values["tka_deg"]),
        lla_deg=float(values["lla_deg"]),
        ssa_deg=float(values["ssa_deg"]),
        torso_width=float(values["torso_width"]),
        torso_depth=float(values["torso_depth"]),
        noise_sigma=float(values["noise_sigma"]),
        seed=int(values["seed"]),
    )


def read_lateral_points(path: Path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if len(parts) == 3:
            rows.append([float(parts[1]), float(parts[2])])
    return np.asarray(rows)


def load_sample(directory: Path) -> LoadedSample:
    directory = Path(directory)
    return LoadedSample(
        sample_id=directory.name,
        frame=load_frame(directory),
        curve=load_png_unit(directory / "curve.png"),
        radiograph=load_png_unit(directory / "xray.png"),
        points=read_lateral_points(directory / "lateral_landmarks.txt"),
        spec=read_spec(directory / "spec.txt"),
    )


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------


def write_corpus_manifest(root: Path, manifest: Dict[str, object]) -> None:
    write_json(Path(root) / MANIFEST_NAME, manifest)


@dataclass
class PreparedSample:
    """Network-ready arrays for one sample at one view angle."""

    sample_id: str
    image: np.ndarray  # [5,H,W]: rgb, normalised depth, valid mask
    landmarks: np.ndarray  # [L,3] rotated camera-space points
    curve: np.ndarray  # [1,H,W]
    radiograph: np.ndarray  # [1,H,W]
    points: np.ndarray  # [8,2] lateral (row, col)
    spec: PhantomSpec


def frame_to_input(frame: RGBDFrame, depth_offset: float = 1.5, depth_scale: float = 0.5) -> np.ndarray:
    """Stack rgb, normalised depth and validity mask into a [5,H,W] array."""
    valid = frame.valid.astype(np.float64)
    depth = np.where(frame.valid, (frame.depth - depth_offset) / depth_scale, 0.0)
    return np.concatenate([frame.rgb * valid[None], depth[None], valid[None]], axis=0)


class Corpus:
    """Read access to a generated corpus directory."""

    def __init__(self, root: Path):
        self.root = Path(root)
        path = self.root / MANIFEST_NAME
        if not path.exists():
            raise PrerequisiteError(f"corpus manifest not found: {path}")
        self.manifest = read_json(path)
        self._cache: Dict[Tuple[str, float, float, float], List[PreparedSample]] = {}

    @property
    def corpus_id(self) -> str:
        return f"n{self.manifest['n']}-seed{self.manifest['seed']}"

    def ids(self, split: Optional[str] = None) -> List[str]:
        return [s["id"] for s in self.manifest["samples"] if split is None or s["split"] == split]

    def sample_dir(self, sample_id: str) -> Path:
        return self.root / "samples" / sample_id

    def load(self, sample_id: str) -> LoadedSample:
        return load_sample(self.sample_dir(sample_id))

    def prepared(
        self,
        split: str,
        theta: float,
        depth_offset: float = 1.5,
        depth_scale: float = 0.5,
        workers: int = 4,
    ) -> List[PreparedSample]:
        """Load and view-transform every sample of ``split`` (cached per theta)."""
        key = (split, float(theta), float(depth_offset), float(depth_scale))
        if key not in self._cache:

            def work(sample_id: str) -> PreparedSample:
                return prepare_sample(self.load(sample_id), theta, depth_offset, depth_scale)

            with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
                self._cache[key] = list(pool.map(work, self.ids(split)))
            logger.info(f"Prepared {len(self._cache[key])} {split} samples at theta={theta:g}")
        return self._cache[key]


def prepare_sample(
    sample: LoadedSample, theta: float, depth_offset: float = 1.5, depth_scale: float = 0.5
) -> PreparedSample:
    frame = transform_frame(sample.frame, theta) if theta else sample.frame
    return PreparedSample(
        sample_id=sample.sample_id,
        image=frame_to_input(frame, depth_offset, depth_scale),
        landmarks=frame.landmarks.points.copy(),
        curve=sample.curve[None].copy(),
        radiograph=sample.radiograph[None].copy(),
        points=sample.points.copy(),
        spec=sample.spec,
    )


# ---------------------------------------------------------------------------
# Landmark normalisation and batching
# ---------------------------------------------------------------------------


def landmark_stats(samples: Sequence[PreparedSample]) -> Tuple[np.ndarray, np.ndarray]:
    """Per-axis (min, max) of landmark coordinates over ``samples``."""
    stacked = np.concatenate([s.landmarks for s in samples], axis=0)
    return stacked.min(axis=0), stacked.max(axis=0)


def normalize_landmarks(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Map each axis from [lo, hi] to [-1, 1]; degenerate axes map to 0."""
    span = np.where(hi - lo > 1e-12, hi - lo, 1.0)
    out = 2.0 * (np.asarray(points) - lo) / span - 1.0
    return np.where(hi - lo > 1e-12, out, 0.0)


def batch_indices(n: int, batch_size: int, rng: Optional[np.random.Generator] = None) -> List[np.ndarray]:
    """Split ``range(n)`` into batches, shuffled when ``rng`` is given."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def stack_batch(samples: Sequence[PreparedSample]) -> Dict[str, np.ndarray]:
    return {
        "image": np.stack([s.image for s in samples]),
        "landmarks": np.stack([s.landmarks for s in samples]),
        "curve": np.stack([s.curve for s in samples]),
        "radiograph": np.stack([s.radiograph for s in samples]),
        "points": np.stack([s.points for s in samples]),
    }
