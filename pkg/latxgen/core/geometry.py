"""Viewpoint transformation of posterior RGB-D frames.

Depth pixels are lifted to camera-space points with a pinhole model, rotated
about the body's vertical axis and splatted back onto the image plane with a
z-buffer. Landmarks follow the same rigid motion but stay 3-D.

Camera convention: X to the right, Y down (image rows), Z away from the camera.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import GeometryError

logger = logging.getLogger(__name__)

LANDMARK_NAMES: Tuple[str, ...] = (
    ("C7",)
    + tuple(f"T{i}" for i in range(1, 13))
    + tuple(f"L{i}" for i in range(1, 6))
    + ("S1", "ToC")
)
LANDMARK_COUNT = len(LANDMARK_NAMES)
DEFAULT_THETA = 45.0


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels; pixel centres sit on integer coordinates."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"sensor size must be positive, got {self.width}x{self.height}")
        if not 0 <= self.cx < self.width:
            raise GeometryError(f"cx={self.cx} outside [0, {self.width})")
        if not 0 <= self.cy < self.height:
            raise GeometryError(f"cy={self.cy} outside [0, {self.height})")

    @classmethod
    def centered(cls, width: int, height: int, focal_scale: float = 1.0) -> "CameraIntrinsics":
        """fx = fy = focal_scale * width, principal point at the image centre."""
        focal = float(focal_scale * width)
        return cls(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, int(width), int(height))

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Continuous pixel coordinates (u, v) of camera-space points [N,3]."""
        points = np.asarray(points, dtype=np.float64)
        z = points[:, 2]
        return self.fx * points[:, 0] / z + self.cx, self.fy * points[:, 1] / z + self.cy

    def as_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }


@dataclass
class LandmarkSet3D:
    """Ordered camera-space landmark points (metres)."""

    points: np.ndarray
    names: Tuple[str, ...] = LANDMARK_NAMES

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64)
        self.names = tuple(self.names)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise GeometryError(f"landmark points must be [L,3], got {self.points.shape}")
        if len(self.names) != self.points.shape[0]:
            raise GeometryError(
                f"{self.points.shape[0]} landmark points but {len(self.names)} names"
            )
        if len(self.names) != LANDMARK_COUNT:
            raise GeometryError(f"expected {LANDMARK_COUNT} landmarks, got {len(self.names)}")
        if np.any(self.points[:, 2] <= 0):
            raise GeometryError("every landmark must lie in front of the camera (z > 0)")

    def pairwise_distances(self) -> np.ndarray:
        diff = self.points[:, None, :] - self.points[None, :, :]
        return np.sqrt((diff**2).sum(axis=-1))

    def get(self, name: str) -> np.ndarray:
        return self.points[self.names.index(name)]


@dataclass
class RGBDFrame:
    """Posterior colour + depth image pair with intrinsics and 3-D landmarks.

    ``valid`` defaults to ``depth > 0``.
    """

    rgb: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics
    landmarks: LandmarkSet3D
    valid: Optional[np.ndarray] = None
    theta: float = 0.0

    def __post_init__(self) -> None:
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        h, w = self.intrinsics.height, self.intrinsics.width
        if self.rgb.shape != (3, h, w):
            raise GeometryError(f"rgb must be [3,{h},{w}], got {self.rgb.shape}")
        if self.depth.shape != (h, w):
            raise GeometryError(f"depth must be [{h},{w}], got {self.depth.shape}")
        if np.any(self.depth < 0):
            raise GeometryError("depth must be non-negative")
        if self.rgb.min(initial=0.0) < 0 or self.rgb.max(initial=0.0) > 1:
            raise GeometryError("rgb values must lie in [0,1]")
        if self.valid is None:
            self.valid = self.depth > 0
        else:
            self.valid = np.asarray(self.valid, dtype=bool)

    @property
    def valid_fraction(self) -> float:
        return float(self.valid.mean())


@dataclass(frozen=True)
class RotationSpec:
    """Rotation by ``theta`` degrees about the vertical (Y) axis through ``pivot``."""

    theta: float
    pivot: Tuple[float, float, float] = field(default=(0.0, 0.0, 0.0))
    axis: str = "y"

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.pivot)):
            raise GeometryError(f"rotation pivot must be finite, got {self.pivot}")
        if self.axis != "y":
            raise GeometryError(f"only the vertical axis is supported, got '{self.axis}'")
        if not -180.0 <= self.theta <= 180.0:
            raise GeometryError(f"theta={self.theta} outside [-180, 180]")

    def matrix(self) -> np.ndarray:
        t = math.radians(self.theta)
        c, s = math.cos(t), math.sin(t)
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def depth_to_points(depth: np.ndarray, intrinsics: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
    """Lift every valid depth pixel to a camera-space point.

    Returns:
        ``(pixels, points)``: integer ``[N,2]`` (row, col) and float ``[N,3]``.

    Raises:
        GeometryError: if no pixel has positive depth ("empty surface").
    """
    depth = np.asarray(depth, dtype=np.float64)
    rows, cols = np.nonzero(depth > 0)
    if rows.size == 0:
        raise GeometryError("empty surface: depth map has no valid pixel")
    z = depth[rows, cols]
    x = (cols - intrinsics.cx) * z / intrinsics.fx
    y = (rows - intrinsics.cy) * z / intrinsics.fy
    return np.stack([rows, cols], axis=1), np.stack([x, y, z], axis=1)


def rotate_points(points: np.ndarray, spec: RotationSpec) -> np.ndarray:
    """Rigidly rotate ``points`` [N,3] about the vertical axis through the pivot."""
    points = np.asarray(points, dtype=np.float64)
    pivot = np.asarray(spec.pivot, dtype=np.float64)
    return (points - pivot) @ spec.matrix().T + pivot


def reproject(
    points: np.ndarray,
    colors: np.ndarray,
    intrinsics: CameraIntrinsics,
    fill_holes: bool = True,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Z-buffered nearest-point splatting onto the image plane.

    Each point lands in pixel ``(floor(v + 0.5), floor(u + 0.5))``; the smallest
    depth wins. Unhit pixels are invalid (depth 0, rgb 0). One hole-filling pass
    follows: an invalid pixel with at least three valid 4-neighbours takes their
    mean depth and colour.

    Returns:
        ``(rgb [3,H,W], depth [H,W], valid [H,W])``.
    """
    points = np.asarray(points, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    h, w = intrinsics.height, intrinsics.width
    rgb = np.zeros((3, h, w))
    depth = np.zeros((h, w))

    in_front = points[:, 2] > 0
    points, colors = points[in_front], colors[in_front]
    if points.shape[0]:
        u, v = intrinsics.project(points)
        cols = np.floor(u + 0.5).astype(np.int64)
        rows = np.floor(v + 0.5).astype(np.int64)
        inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        rows, cols, z, colors = rows[inside], cols[inside], points[inside, 2], colors[inside]
        flat = rows * w + cols
        order = np.lexsort((z, flat))
        _, first = np.unique(flat[order], return_index=True)
        winners = order[first]
        depth[rows[winners], cols[winners]] = z[winners]
        rgb[:, rows[winners], cols[winners]] = colors[winners].T

    valid = depth > 0
    if fill_holes:
        rgb, depth, valid = _fill_holes_once(rgb, depth, valid)
    return rgb, depth, valid


def _fill_holes_once(rgb: np.ndarray, depth: np.ndarray, valid: np.ndarray):
    padded_valid = np.pad(valid, 1).astype(np.float64)
    padded_depth = np.pad(depth, 1)
    padded_rgb = np.pad(rgb, ((0, 0), (1, 1), (1, 1)))
    shifts = ((0, 1), (2, 1), (1, 0), (1, 2))
    h, w = depth.shape

    count = sum(padded_valid[r : r + h, c : c + w] for r, c in shifts)
    depth_sum = sum(padded_depth[r : r + h, c : c + w] for r, c in shifts)
    rgb_sum = sum(padded_rgb[:, r : r + h, c : c + w] for r, c in shifts)

    fill = (~valid) & (count >= 3)
    out_depth = depth.copy()
    out_rgb = rgb.copy()
    out_depth[fill] = depth_sum[fill] / count[fill]
    out_rgb[:, fill] = rgb_sum[:, fill] / count[fill]
    return out_rgb, out_depth, valid | fill


def surface_pivot(frame: RGBDFrame) -> Tuple[float, float, float]:
    """Centroid of the frame's valid back-surface points."""
    _, points = depth_to_points(np.where(frame.valid, frame.depth, 0.0), frame.intrinsics)
    return tuple(float(c) for c in points.mean(axis=0))


def transform_frame(frame: RGBDFrame, spec: Union[RotationSpec, float] = DEFAULT_THETA) -> RGBDFrame:
    """The full viewpoint transformation: lift, rotate, re-project.

    ``spec`` may be a bare angle in degrees, in which case the pivot is the
    surface centroid. Landmarks are rotated by the same rigid motion.

    Raises:
        GeometryError: if the frame has no valid depth or theta is outside [-90, 90].
    """
    if not isinstance(spec, RotationSpec):
        spec = RotationSpec(theta=float(spec), pivot=surface_pivot(frame))
    if not -90.0 <= spec.theta <= 90.0:
        raise GeometryError(f"view rotation theta={spec.theta} outside [-90, 90]")

    pixels, points = depth_to_points(np.where(frame.valid, frame.depth, 0.0), frame.intrinsics)
    colors = frame.rgb[:, pixels[:, 0], pixels[:, 1]].T
    rotated = rotate_points(points, spec)
    rgb, depth, valid = reproject(rotated, colors, frame.intrinsics)
    landmarks = LandmarkSet3D(rotate_points(frame.landmarks.points, spec), frame.landmarks.names)
    logger.debug(
        f"transform_frame theta={spec.theta:.1f}: valid fraction "
        f"{frame.valid_fraction:.3f} -> {valid.mean():.3f}"
    )
    return replace(
        frame,
        rgb=np.clip(rgb, 0.0, 1.0),
        depth=depth,
        valid=valid,
        landmarks=landmarks,
        theta=frame.theta + spec.theta,
    )


def mean_valid_fraction(frames: Sequence[RGBDFrame]) -> float:
    return float(np.mean([f.valid_fraction for f in frames])) if frames else 0.0
