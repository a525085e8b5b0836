"""Paired-sample augmentation: horizontal flip, shift and small rotations.

Flips touch the posterior input and its landmarks only; lateral targets keep
their orientation so curvature direction stays meaningful. Shift and rotation
are one image-plane affine applied to every paired image, the lateral points
and (through the camera) the 3-D landmarks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from .dataset import PreparedSample
from .errors import ConfigError
from .geometry import CameraIntrinsics

# rgb channels are interpolated, depth and validity are resampled nearest
_LINEAR_CHANNELS = 3


@dataclass(frozen=True)
class AugmentConfig:
    flip_probability: float = 0.5
    max_shift_fraction: float = 0.05
    max_rotation_deg: float = 5.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ConfigError(f"flip_probability must lie in [0, 1], got {self.flip_probability}")
        if not 0.0 <= self.max_shift_fraction < 0.5:
            raise ConfigError(f"max_shift_fraction must lie in [0, 0.5), got {self.max_shift_fraction}")
        if not 0.0 <= self.max_rotation_deg <= 45.0:
            raise ConfigError(f"max_rotation_deg must lie in [0, 45], got {self.max_rotation_deg}")

    @classmethod
    def from_flags(
        cls, flip: bool, shift: bool, rotate: bool, max_shift_fraction: float = 0.05, max_rotation_deg: float = 5.0
    ) -> "AugmentConfig":
        return cls(
            flip_probability=0.5 if flip else 0.0,
            max_shift_fraction=max_shift_fraction if shift else 0.0,
            max_rotation_deg=max_rotation_deg if rotate else 0.0,
        )

    @property
    def is_identity(self) -> bool:
        return self.flip_probability == 0 and self.max_shift_fraction == 0 and self.max_rotation_deg == 0


@dataclass(frozen=True)
class ImageAffine:
    """Rotation by ``angle_deg`` about the image centre followed by a (row, col) shift."""

    angle_deg: float
    shift_rows: float
    shift_cols: float
    height: int
    width: int

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.height - 1) / 2.0, (self.width - 1) / 2.0])

    def rotation(self) -> np.ndarray:
        a = math.radians(self.angle_deg)
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, -s], [s, c]])

    def apply_points(self, rows_cols: np.ndarray) -> np.ndarray:
        rc = np.asarray(rows_cols, dtype=np.float64)
        shift = np.array([self.shift_rows, self.shift_cols])
        return (rc - self.center) @ self.rotation().T + self.center + shift

    def apply_image(self, image: np.ndarray, order: int) -> np.ndarray:
        """Warp one [H,W] channel; outside samples are zero."""
        inverse = self.rotation().T
        shift = np.array([self.shift_rows, self.shift_cols])
        offset = self.center - inverse @ (self.center + shift)
        return ndimage.affine_transform(image, inverse, offset=offset, order=order, mode="constant", cval=0.0)

    @property
    def is_identity(self) -> bool:
        return self.angle_deg == 0 and self.shift_rows == 0 and self.shift_cols == 0


def flip_landmarks(points: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Mirror camera-space points so their projections land at column W-1-u."""
    out = np.array(points, dtype=np.float64)
    out[:, 0] = (intrinsics.width - 1 - 2.0 * intrinsics.cx) * out[:, 2] / intrinsics.fx - out[:, 0]
    return out


def warp_landmarks(points: np.ndarray, affine: ImageAffine, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Move each landmark's projection by ``affine`` while keeping its depth."""
    out = np.array(points, dtype=np.float64)
    u, v = intrinsics.project(out)
    moved = affine.apply_points(np.stack([v, u], axis=1))
    z = out[:, 2]
    out[:, 0] = (moved[:, 1] - intrinsics.cx) * z / intrinsics.fx
    out[:, 1] = (moved[:, 0] - intrinsics.cy) * z / intrinsics.fy
    return out


def _warp_stack(stack: np.ndarray, affine: ImageAffine, linear: int) -> np.ndarray:
    return np.stack(
        [affine.apply_image(channel, order=1 if i < linear else 0) for i, channel in enumerate(stack)]
    )


def augment(
    sample: PreparedSample,
    rng: np.random.Generator,
    config: AugmentConfig = AugmentConfig(),
    intrinsics: Optional[CameraIntrinsics] = None,
) -> PreparedSample:
    """Return a randomly flipped/shifted/rotated copy of ``sample``.

    Draws from ``rng`` in a fixed order (flip, shift rows, shift cols, angle), so
    a seeded generator gives the same augmentation every time.
    """
    _, height, width = sample.image.shape
    intrinsics = intrinsics or CameraIntrinsics.centered(width, height)
    if config.is_identity:
        return replace(sample)

    flip = bool(rng.random() < config.flip_probability)
    max_rows = config.max_shift_fraction * height
    max_cols = config.max_shift_fraction * width
    affine = ImageAffine(
        angle_deg=float(rng.uniform(0.0, config.max_rotation_deg)),
        shift_rows=float(rng.uniform(-max_rows, max_rows)),
        shift_cols=float(rng.uniform(-max_cols, max_cols)),
        height=height,
        width=width,
    )

    image = sample.image[:, :, ::-1].copy() if flip else sample.image.copy()
    landmarks = flip_landmarks(sample.landmarks, intrinsics) if flip else sample.landmarks.copy()
    curve, radiograph, points = sample.curve.copy(), sample.radiograph.copy(), sample.points.copy()

    if not affine.is_identity:
        image = _warp_stack(image, affine, _LINEAR_CHANNELS)
        landmarks = warp_landmarks(landmarks, affine, intrinsics)
        curve = _warp_stack(curve, affine, 0)
        radiograph = _warp_stack(radiograph, affine, radiograph.shape[0])
        points = affine.apply_points(points)

    return replace(sample, image=image, landmarks=landmarks, curve=curve, radiograph=radiograph, points=points)


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Per-sample generator independent of worker scheduling."""
    return np.random.default_rng([seed, epoch, index])
