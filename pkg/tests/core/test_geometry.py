"""Tests for lifting, rotating and re-projecting RGB-D frames."""
import numpy as np
import pytest

from latxgen.core.errors import GeometryError
from latxgen.core.geometry import (
    LANDMARK_COUNT,
    LANDMARK_NAMES,
    CameraIntrinsics,
    LandmarkSet3D,
    RGBDFrame,
    RotationSpec,
    depth_to_points,
    mean_valid_fraction,
    reproject,
    rotate_points,
    transform_frame,
)
from latxgen.core.phantom import NORMAL_RANGES, PhantomSpec, RenderSettings, build_spine, render_posterior


@pytest.fixture
def intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=20.0, fy=20.0, cx=8.0, cy=6.0, width=16, height=12)


@pytest.fixture(scope="module")
def phantom_frame() -> RGBDFrame:
    spine = build_spine(PhantomSpec(30.0, 40.0, 38.0, noise_sigma=0.0), RenderSettings())
    return render_posterior(spine)


def plane_frame(intrinsics: CameraIntrinsics, z: float = 1.0) -> RGBDFrame:
    depth = np.full((intrinsics.height, intrinsics.width), z)
    ys = np.linspace(-0.1, 0.1, LANDMARK_COUNT)
    landmarks = LandmarkSet3D(np.column_stack([np.zeros(LANDMARK_COUNT), ys, np.full(LANDMARK_COUNT, z)]))
    rgb = np.random.default_rng(1).uniform(size=(3, intrinsics.height, intrinsics.width))
    return RGBDFrame(rgb=rgb, depth=depth, intrinsics=intrinsics, landmarks=landmarks)


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


def test_landmark_names_cover_c7_to_toc() -> None:
    assert LANDMARK_COUNT == 20
    assert LANDMARK_NAMES[0] == "C7"
    assert LANDMARK_NAMES[-2:] == ("S1", "ToC")


def test_landmarks_must_be_in_front_of_camera() -> None:
    points = np.ones((LANDMARK_COUNT, 3))
    points[3, 2] = 0.0
    with pytest.raises(GeometryError, match="z > 0"):
        LandmarkSet3D(points)


def test_intrinsics_validation() -> None:
    with pytest.raises(GeometryError):
        CameraIntrinsics(fx=0.0, fy=1.0, cx=0.0, cy=0.0, width=4, height=4)
    with pytest.raises(GeometryError, match="cx"):
        CameraIntrinsics(fx=1.0, fy=1.0, cx=4.0, cy=0.0, width=4, height=4)


def test_frame_rejects_mismatched_shapes_and_out_of_range_values(intrinsics: CameraIntrinsics) -> None:
    frame = plane_frame(intrinsics)
    with pytest.raises(GeometryError, match="depth"):
        RGBDFrame(frame.rgb, frame.depth[:-1], intrinsics, frame.landmarks)
    with pytest.raises(GeometryError, match="rgb"):
        RGBDFrame(frame.rgb * 2.0, frame.depth, intrinsics, frame.landmarks)


def test_rotation_spec_rejects_non_finite_pivot() -> None:
    with pytest.raises(GeometryError):
        RotationSpec(10.0, pivot=(0.0, float("nan"), 0.0))


# ---------------------------------------------------------------------------
# depth_to_points
# ---------------------------------------------------------------------------


def test_principal_point_ray_and_unit_tangent(intrinsics: CameraIntrinsics) -> None:
    depth = np.zeros((12, 16))
    depth[6, 8] = 2.0
    _, points = depth_to_points(depth, intrinsics)
    np.testing.assert_allclose(points, [[0.0, 0.0, 2.0]])

    wide = CameraIntrinsics(fx=4.0, fy=4.0, cx=8.0, cy=6.0, width=16, height=12)
    depth = np.zeros((12, 16))
    depth[6, 12] = 1.0
    _, points = depth_to_points(depth, wide)
    np.testing.assert_allclose(points, [[1.0, 0.0, 1.0]])


def test_lifted_points_project_back_to_their_pixels(intrinsics: CameraIntrinsics) -> None:
    depth = np.random.default_rng(2).uniform(0.5, 3.0, size=(12, 16))
    pixels, points = depth_to_points(depth, intrinsics)
    u, v = intrinsics.project(points)
    np.testing.assert_allclose(u, pixels[:, 1], atol=1e-9)
    np.testing.assert_allclose(v, pixels[:, 0], atol=1e-9)


def test_empty_surface_is_an_error(intrinsics: CameraIntrinsics) -> None:
    with pytest.raises(GeometryError, match="empty surface"):
        depth_to_points(np.zeros((12, 16)), intrinsics)


# ---------------------------------------------------------------------------
# rotate_points
# ---------------------------------------------------------------------------


def test_rotation_identity_half_turn_and_inverse() -> None:
    points = np.random.default_rng(3).normal(size=(10, 3))
    np.testing.assert_allclose(rotate_points(points, RotationSpec(0.0)), points)
    flipped = points * np.array([-1.0, 1.0, -1.0])
    np.testing.assert_allclose(rotate_points(points, RotationSpec(180.0)), flipped, atol=1e-12)
    pivot = (0.2, -0.1, 1.5)
    there = rotate_points(points, RotationSpec(37.0, pivot))
    back = rotate_points(there, RotationSpec(-37.0, pivot))
    np.testing.assert_allclose(back, points, atol=1e-12)


def test_rotation_preserves_distance_to_pivot() -> None:
    points = np.random.default_rng(4).normal(size=(10, 3))
    pivot = np.array([0.3, 0.0, 1.0])
    rotated = rotate_points(points, RotationSpec(63.0, tuple(pivot)))
    np.testing.assert_allclose(
        np.linalg.norm(rotated - pivot, axis=1), np.linalg.norm(points - pivot, axis=1), atol=1e-12
    )


# ---------------------------------------------------------------------------
# reproject
# ---------------------------------------------------------------------------


def test_single_point_on_principal_ray_hits_one_pixel(intrinsics: CameraIntrinsics) -> None:
    rgb, depth, valid = reproject(np.array([[0.0, 0.0, 1.0]]), np.array([[1.0, 0.5, 0.0]]), intrinsics)
    assert valid.sum() == 1
    assert valid[6, 8]
    assert depth[6, 8] == 1.0
    np.testing.assert_allclose(rgb[:, 6, 8], [1.0, 0.5, 0.0])


def test_z_buffer_keeps_nearest_point(intrinsics: CameraIntrinsics) -> None:
    points = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 1.0]])
    colors = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    rgb, depth, _ = reproject(points, colors, intrinsics)
    assert depth[6, 8] == 1.0
    np.testing.assert_allclose(rgb[:, 6, 8], [1.0, 1.0, 1.0])


def test_hole_with_three_valid_neighbours_is_filled(intrinsics: CameraIntrinsics) -> None:
    frame = plane_frame(intrinsics, z=2.0)
    mask = np.ones((12, 16), dtype=bool)
    mask[5, 5] = False
    _, points = depth_to_points(np.where(mask, frame.depth, 0.0), intrinsics)
    _, depth, valid = reproject(points, np.zeros_like(points), intrinsics)
    assert valid[5, 5]
    assert depth[5, 5] == pytest.approx(2.0)
    _, _, raw_valid = reproject(points, np.zeros_like(points), intrinsics, fill_holes=False)
    assert not raw_valid[5, 5]


def test_zero_angle_round_trip_reproduces_depth(intrinsics: CameraIntrinsics) -> None:
    depth = np.random.default_rng(5).uniform(1.0, 2.0, size=(12, 16))
    pixels, points = depth_to_points(depth, intrinsics)
    _, out, valid = reproject(points, np.zeros_like(points), intrinsics)
    assert valid.all()
    np.testing.assert_allclose(out, depth, atol=1e-9)


# ---------------------------------------------------------------------------
# transform_frame
# ---------------------------------------------------------------------------


def test_transform_with_zero_angle_is_identity(phantom_frame: RGBDFrame) -> None:
    out = transform_frame(phantom_frame, 0.0)
    np.testing.assert_allclose(out.landmarks.points, phantom_frame.landmarks.points, atol=1e-9)
    both = out.valid & phantom_frame.valid
    np.testing.assert_allclose(out.depth[both], phantom_frame.depth[both], atol=1e-9)


def test_transform_preserves_landmark_distances(phantom_frame: RGBDFrame) -> None:
    out = transform_frame(phantom_frame, 45.0)
    np.testing.assert_allclose(
        out.landmarks.pairwise_distances(), phantom_frame.landmarks.pairwise_distances(), atol=1e-12
    )
    assert out.theta == 45.0
    assert np.all(out.depth[out.valid] > 0)


def test_rotation_reduces_visible_surface() -> None:
    rng = np.random.default_rng(3)
    frames = []
    for seed in range(20):
        angles = (float(rng.uniform(*NORMAL_RANGES[k])) for k in ("tka", "lla", "ssa"))
        frames.append(render_posterior(build_spine(PhantomSpec(*angles, noise_sigma=0.002, seed=seed))))
    fractions = [mean_valid_fraction([transform_frame(f, t) for f in frames]) for t in (0.0, 30.0, 45.0, 60.0)]
    assert all(later <= earlier for earlier, later in zip(fractions, fractions[1:]))
    assert fractions[-1] < fractions[0]


def test_transform_rejects_angles_beyond_ninety(phantom_frame: RGBDFrame) -> None:
    with pytest.raises(GeometryError, match="outside \\[-90, 90\\]"):
        transform_frame(phantom_frame, 120.0)
