"""Tests for the procedural spine phantom and corpus generation."""
import math
from pathlib import Path

import numpy as np
import pytest

from latxgen.core.errors import PhantomError
from latxgen.core.evaluation import (
    angles_from_model,
    angles_from_profile,
    angles_from_radiograph,
    measure_sagittal_angles,
)
from latxgen.core.phantom import (
    CENTERLINE_SAMPLES,
    NORMAL_RANGES,
    PhantomSpec,
    RenderSettings,
    S1_SUPERIOR,
    SampleRanges,
    build_spine,
    generate_corpus,
    lateral_points,
    lateral_view,
    render_curve_map,
    render_lateral_gt,
    render_posterior,
    sample_spec,
    split_assignment,
)


def normal_spec(seed: int, noise_sigma: float = 0.0) -> PhantomSpec:
    rng = np.random.default_rng(seed)
    angles = (float(rng.uniform(*NORMAL_RANGES[k])) for k in ("tka", "lla", "ssa"))
    return PhantomSpec(*angles, noise_sigma=noise_sigma, seed=seed)


@pytest.fixture(scope="module")
def spine():
    return build_spine(PhantomSpec(30.0, 40.0, 38.0, noise_sigma=0.0))


# ---------------------------------------------------------------------------
# Spec validation
# ---------------------------------------------------------------------------


def test_spec_lists_every_violated_range() -> None:
    with pytest.raises(PhantomError) as info:
        PhantomSpec(tka_deg=80.0, lla_deg=-1.0, ssa_deg=38.0)
    assert len(info.value.violations) == 2
    assert info.value.error_type == "phantom"


def test_infeasible_angle_combination_names_the_level() -> None:
    with pytest.raises(PhantomError, match="lumbosacral kink at S1"):
        build_spine(PhantomSpec(tka_deg=70.0, lla_deg=0.0, ssa_deg=70.0))


# ---------------------------------------------------------------------------
# build_spine
# ---------------------------------------------------------------------------


def test_model_angles_reproduce_spec(spine) -> None:
    np.testing.assert_allclose(angles_from_model(spine).as_tuple(), (30.0, 40.0, 38.0), atol=1e-6)
    np.testing.assert_allclose(angles_from_profile(spine.profile).as_tuple(), (30.0, 40.0, 38.0), atol=1e-6)


def test_straight_column_measures_zero_curvature() -> None:
    straight = build_spine(PhantomSpec(0.0, 0.0, 45.0))
    tka, lla, ssa = angles_from_model(straight).as_tuple()
    assert tka == pytest.approx(0.0, abs=1e-9)
    assert lla == pytest.approx(0.0, abs=1e-9)
    assert ssa == pytest.approx(45.0)


def test_straight_column_stands_plumb_above_the_sacrum() -> None:
    profile = build_spine(PhantomSpec(0.0, 0.0, 45.0)).profile
    down, post, _ = profile.evaluate([0.0, 0.5, S1_SUPERIOR])
    np.testing.assert_allclose(post, post[0], atol=1e-12)
    assert math.degrees(profile.phi_top) == pytest.approx(0.0, abs=1e-9)


def test_random_normal_range_specs_are_recovered() -> None:
    rng = np.random.default_rng(11)
    for _ in range(20):
        target = tuple(float(rng.uniform(*NORMAL_RANGES[k])) for k in ("tka", "lla", "ssa"))
        model = build_spine(PhantomSpec(*target))
        np.testing.assert_allclose(angles_from_model(model).as_tuple(), target, atol=1e-6)


def test_centerline_is_sampled_with_monotone_arc_length(spine) -> None:
    assert spine.centerline.shape == (CENTERLINE_SAMPLES, 3)
    steps = np.linalg.norm(np.diff(spine.centerline, axis=0), axis=1)
    assert np.all(steps > 0)
    assert steps.sum() == pytest.approx(spine.settings.spine_length, rel=1e-3)


def test_vertebra_frames_are_orthonormal(spine) -> None:
    assert len(spine.vertebrae) == 18
    for v in spine.vertebrae:
        np.testing.assert_allclose(v.axes @ v.axes.T, np.eye(3), atol=1e-12)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def test_posterior_render_is_deterministic_per_seed() -> None:
    spec = PhantomSpec(30.0, 40.0, 38.0, noise_sigma=0.002, seed=5)
    a = render_posterior(build_spine(spec))
    b = render_posterior(build_spine(spec))
    np.testing.assert_array_equal(a.depth, b.depth)
    np.testing.assert_array_equal(a.rgb, b.rgb)


@pytest.mark.parametrize("seed", range(20))
def test_c7_projects_inside_valid_mask(seed: int) -> None:
    frame = render_posterior(build_spine(normal_spec(seed, noise_sigma=0.002)))
    u, v = frame.intrinsics.project(frame.landmarks.points[:1])
    assert frame.valid[int(round(v[0])), int(round(u[0]))]


def test_mean_depth_is_near_camera_distance(spine) -> None:
    frame = render_posterior(spine)
    mean_depth = frame.depth[frame.valid].mean()
    assert abs(mean_depth - spine.settings.camera_distance) < spine.spec.torso_depth


def test_straight_spine_draws_a_vertical_band() -> None:
    curve = render_curve_map(build_spine(PhantomSpec(0.0, 0.0, 45.0, noise_sigma=0.0)))
    rows = np.nonzero(curve.sum(axis=1))[0]
    cols = np.arange(curve.shape[1], dtype=np.float64)
    centroids = (curve[rows] * cols).sum(axis=1) / curve[rows].sum(axis=1)
    assert centroids.var() < 1.0


def test_curve_map_pixel_count_matches_band_area(spine) -> None:
    view = lateral_view(spine)
    curve = render_curve_map(spine, view)
    length_px = view.scale * spine.settings.spine_length
    width = spine.settings.band_width
    assert 0.8 * width * length_px <= curve.sum() <= 1.2 * width * length_px
    assert set(np.unique(curve)) <= {0.0, 1.0}


def test_radiograph_is_normalised_with_bright_vertebrae(spine) -> None:
    view = lateral_view(spine)
    _, radiograph = render_lateral_gt(spine)
    assert radiograph.min() >= 0.0
    assert radiograph.max() == pytest.approx(1.0)
    tissue = np.median(radiograph[radiograph > 0])
    down, post = spine.profile.evaluate([0.7])[:2]
    row, col = view.to_pixels(down[0], post[0])
    assert radiograph[int(round(row)), int(round(col))] > tissue


def test_curve_map_and_radiograph_share_c7_and_toc_rows(spine) -> None:
    curve, _ = render_lateral_gt(spine)
    points = lateral_points(spine)
    rows = np.nonzero(curve.sum(axis=1))[0]
    half = spine.settings.band_width / 2.0
    assert abs(rows[0] + half - points[0, 0]) <= 2.0
    assert abs(rows[-1] - half - points[-1, 0]) <= 2.0


@pytest.mark.parametrize("seed", range(20))
def test_curve_map_protractor_recovers_angles(seed: int) -> None:
    spec = normal_spec(seed)
    measured = measure_sagittal_angles(render_curve_map(build_spine(spec))).as_tuple()
    np.testing.assert_allclose(measured, spec.angles, atol=1.5)


@pytest.mark.parametrize("seed", range(20))
def test_depth_noise_leaves_angle_ground_truth_intact(seed: int) -> None:
    clean = build_spine(normal_spec(seed))
    noisy = build_spine(normal_spec(seed, noise_sigma=0.002))
    target = noisy.spec.angles
    np.testing.assert_allclose(angles_from_model(noisy).as_tuple(), target, atol=1.0)
    np.testing.assert_allclose(angles_from_radiograph(lateral_points(noisy)).as_tuple(), target, atol=1.0)
    np.testing.assert_array_equal(render_curve_map(noisy), render_curve_map(clean))
    a, b = render_posterior(clean), render_posterior(noisy)
    np.testing.assert_array_equal(a.valid, b.valid)
    jitter = (b.depth - a.depth)[a.valid]
    assert 0.001 < jitter.std() < 0.003


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------


def test_split_assignment_honours_ratio_and_keeps_both_splits() -> None:
    labels = split_assignment(10, 7, 0.8)
    assert labels.count("train") == 8
    assert labels.count("test") == 2
    assert split_assignment(2, 0, 1.0).count("test") == 1


def test_sample_spec_covers_normal_and_abnormal_bins() -> None:
    ranges = SampleRanges()
    specs = [sample_spec(np.random.default_rng(i), i, ranges) for i in range(200)]
    for index, key in enumerate(("tka", "lla", "ssa")):
        lo, hi = NORMAL_RANGES[key]
        values = np.array([s.angles[index] for s in specs])
        assert np.any((values >= lo) & (values <= hi))
        assert np.any((values < lo) | (values > hi))


def test_sample_spec_gives_up_on_infeasible_ranges() -> None:
    ranges = SampleRanges(tka=(70.0, 70.0), lla=(0.0, 0.0), ssa=(70.0, 70.0))
    with pytest.raises(PhantomError, match="no feasible spec"):
        sample_spec(np.random.default_rng(0), 0, ranges, max_tries=5)


def test_generate_corpus_rejects_tiny_n(tmp_path: Path) -> None:
    with pytest.raises(PhantomError):
        generate_corpus(1, 0, tmp_path)


def test_generate_corpus_layout_and_determinism(tmp_path: Path) -> None:
    first = generate_corpus(10, 3, tmp_path / "a", workers=1)
    second = generate_corpus(10, 3, tmp_path / "b", workers=3)
    splits = [s["split"] for s in first["samples"]]
    assert splits.count("train") == 8
    assert len(list((tmp_path / "a" / "samples").iterdir())) == 10
    assert first == second
    for path in sorted((tmp_path / "a").rglob("*")):
        if path.is_file():
            twin = tmp_path / "b" / path.relative_to(tmp_path / "a")
            assert path.read_bytes() == twin.read_bytes(), path.name
    assert math.isclose(first["split_ratio"], 0.8)
