"""Segmentation and image metrics, sagittal-angle measurement and reports.

Angles are measured three ways:

* from a phantom's vertebra frames (exact),
* from a curve map, by fitting the straight/arc sagittal profile to the band
  (coarse fit on row centroids, then a rendered-band refinement),
* from the eight lateral points a landmark network finds on a radiograph.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage, optimize, stats

from ..utils.helpers import atomic_write_text, format_key_values, load_png_unit, save_png8
from .dataset import read_spec
from .errors import MeasurementError, ShapeError
from .phantom import (
    L1_SUPERIOR,
    LATERAL_POINT_FRACTIONS,
    LEVEL_FRACTIONS,
    MAX_TANGENT_DEG,
    NORMAL_RANGES,
    S1_SUPERIOR,
    T5_SUPERIOR,
    T12_INFERIOR,
    SagittalProfile,
    SpineModel3D,
    tangent_angle,
)

logger = logging.getLogger(__name__)

MIN_FOREGROUND = 50
SEG_COLUMNS = ("accuracy", "precision", "sensitivity", "f1", "iou")
ANGLE_NAMES = ("tka", "lla", "ssa")


# ---------------------------------------------------------------------------
# Segmentation and image metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SegScores:
    """Pixel scores of a binarised curve map.

    ``undefined`` names the scores whose denominator was empty (reported as 0).
    """

    accuracy: float
    precision: float
    sensitivity: float
    f1: float
    iou: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    undefined: Tuple[str, ...] = ()

    def row(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in SEG_COLUMNS}


def _ratio(num: float, den: float, name: str, undefined: List[str]) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def scores_from_counts(tp: int, fp: int, fn: int, tn: int) -> SegScores:
    undefined: List[str] = []
    total = tp + fp + fn + tn
    accuracy = _ratio(tp + tn, total, "accuracy", undefined)
    precision = _ratio(tp, tp + fp, "precision", undefined)
    sensitivity = _ratio(tp, tp + fn, "sensitivity", undefined)
    f1 = _ratio(2 * precision * sensitivity, precision + sensitivity, "f1", undefined)
    iou = _ratio(tp, tp + fp + fn, "iou", undefined)
    return SegScores(accuracy, precision, sensitivity, f1, iou, tp, fp, fn, tn, tuple(undefined))


def seg_scores(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> SegScores:
    """Accuracy, precision, sensitivity, F1 and IoU over the whole image.

    Raises:
        ShapeError: if the maps differ in shape.
    """
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"seg_scores shape mismatch: {pred.shape} vs {gt.shape}")
    p = pred > threshold
    g = gt > threshold
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    tn = int(np.sum(~p & ~g))
    return scores_from_counts(tp, fp, fn, tn)


def mean_scores(scores: Sequence[SegScores]) -> SegScores:
    """Per-image average of each score."""
    if not scores:
        return scores_from_counts(0, 0, 0, 0)
    values = {name: float(np.mean([getattr(s, name) for s in scores])) for name in SEG_COLUMNS}
    counts = {name: int(sum(getattr(s, name) for s in scores)) for name in ("tp", "fp", "fn", "tn")}
    return SegScores(**values, **counts)


def psnr(pred: np.ndarray, gt: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"psnr shape mismatch: {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


# ---------------------------------------------------------------------------
# Sagittal angles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SagittalAngles:
    tka_deg: float
    lla_deg: float
    ssa_deg: float

    def as_tuple(self) -> Tuple[float, float, float]:
        return self.tka_deg, self.lla_deg, self.ssa_deg

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(ANGLE_NAMES, self.as_tuple()))


def angles_from_profile(profile: SagittalProfile) -> SagittalAngles:
    _, _, phi = profile.evaluate([T5_SUPERIOR, T12_INFERIOR, L1_SUPERIOR, S1_SUPERIOR])
    t5, t12, l1, s1 = np.degrees(phi)
    lumbar = math.degrees(profile.evaluate([S1_SUPERIOR], from_above=True)[2][0])
    return SagittalAngles(float(t5 - t12), float(lumbar - l1), float(s1))


def angles_from_model(spine: SpineModel3D) -> SagittalAngles:
    """Endplate angles read off the vertebra frames."""
    t5 = tangent_angle(spine.vertebra("T5").superior_tangent)
    t12 = tangent_angle(spine.vertebra("T12").inferior_tangent)
    l1 = tangent_angle(spine.vertebra("L1").superior_tangent)
    s1 = spine.vertebra("S1")
    return SagittalAngles(t5 - t12, tangent_angle(s1.approach_tangent) - l1, tangent_angle(s1.superior_tangent))


@dataclass
class Centerline:
    """Row-wise centroids of a curve-map band."""

    rows: np.ndarray
    cols: np.ndarray
    band_width: float
    first_row: int
    last_row: int


def centerline(curve: np.ndarray, threshold: float = 0.5) -> Centerline:
    """Column centroid of the foreground in every occupied row.

    Raises:
        MeasurementError: with fewer than 50 foreground pixels.
    """
    mask = np.asarray(curve) > threshold
    if mask.ndim != 2:
        raise ShapeError(f"curve map must be [H,W], got {mask.shape}")
    if int(mask.sum()) < MIN_FOREGROUND:
        raise MeasurementError(
            f"unmeasurable: curve map has {int(mask.sum())} foreground pixels, need {MIN_FOREGROUND}"
        )
    counts = mask.sum(axis=1)
    rows = np.nonzero(counts)[0]
    cols = np.arange(mask.shape[1], dtype=np.float64)
    centroids = (mask[rows] * cols[None, :]).sum(axis=1) / counts[rows]
    return Centerline(
        rows=rows.astype(np.float64),
        cols=centroids,
        band_width=float(np.median(counts[rows])),
        first_row=int(rows[0]),
        last_row=int(rows[-1]),
    )


# Starting (phi_T5, TKA, LLA, SSA) in degrees for the profile fit.
_FIT_STARTS = ((0.0, 30.0, 40.0, 40.0), (20.0, 50.0, 50.0, 50.0), (-20.0, 10.0, 20.0, 20.0))
_ANGLE_BOUND = math.radians(100.0)
_PHI_LIMIT = math.radians(MAX_TANGENT_DEG)
_DENSE = np.linspace(0.0, 1.0, 401)
# polyline vertices for band rendering; breakpoints included so corners stay sharp
_VERTICES = np.unique(np.concatenate([np.linspace(0.0, 1.0, 121), list(LEVEL_FRACTIONS.values())]))
_EDGE_SOFTNESS = 0.5
_SSA_STARTS = tuple(math.radians(a) for a in (20.0, 40.0, 60.0))


def _tilt_penalty(profile: SagittalProfile) -> List[float]:
    return [100.0 * max(0.0, abs(phi) - _PHI_LIMIT) for phi in (profile.phi_l1, profile.phi_lumbar, profile.phi_s1)]


def _profile(params: np.ndarray) -> SagittalProfile:
    r0, c0, phi_top, tka, lla, ssa, length = params[:7]
    return SagittalProfile(phi_top=phi_top, tka=tka, lla=lla, ssa=ssa, length=length, origin=(r0, c0))


def _bounds(span: float) -> Tuple[List[float], List[float]]:
    lower = [-np.inf, -np.inf, -_PHI_LIMIT, -_ANGLE_BOUND, -_ANGLE_BOUND, -_PHI_LIMIT, 0.5 * span]
    upper = [np.inf, np.inf, _PHI_LIMIT, _ANGLE_BOUND, _ANGLE_BOUND, _PHI_LIMIT, 3.0 * span]
    return lower, upper


def _best_fit(residuals, x0_base: Sequence[float], lower: Sequence[float], upper: Sequence[float]) -> np.ndarray:
    best = None
    for start in _FIT_STARTS:
        x0 = np.array(list(x0_base[:2]) + [math.radians(a) for a in start] + [x0_base[2]])
        x0 = np.clip(x0, np.asarray(lower) + 1e-9, np.asarray(upper) - 1e-9)
        result = optimize.least_squares(residuals, x0, bounds=(lower, upper), method="trf", x_scale="jac")
        if best is None or result.cost < best.cost:
            best = result
    return best.x


def fit_profile_to_centerline(line: Centerline) -> SagittalProfile:
    """Coarse least-squares profile through a band's row centroids (pixel units)."""
    w = line.band_width
    keep = (line.rows >= line.first_row + w) & (line.rows <= line.last_row - w)
    rows, cols = line.rows[keep], line.cols[keep]
    if rows.size < 6:
        raise MeasurementError(f"unmeasurable: only {rows.size} usable centreline rows")
    top = line.first_row + w / 2.0
    bottom = line.last_row - w / 2.0
    span = max(bottom - top, 1.0)

    def residuals(params: np.ndarray) -> np.ndarray:
        profile = _profile(params)
        down, post, _ = profile.evaluate(_DENSE)
        order = np.argsort(down)
        model_cols = np.interp(rows, down[order], post[order])
        return np.concatenate(
            [model_cols - cols, [params[0] - top, down[-1] - bottom], _tilt_penalty(profile)]
        )

    lower, upper = _bounds(span)
    return _profile(_best_fit(residuals, (top, float(cols[0]), span), lower, upper))


def distance_to_polyline(rows: np.ndarray, cols: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Distance from each (row, col) to the polyline through ``vertices`` [N,2]."""
    a = vertices[:-1]
    d = vertices[1:] - a
    seg2 = np.maximum((d**2).sum(axis=1), 1e-12)
    pr = rows[:, None] - a[None, :, 0]
    pc = cols[:, None] - a[None, :, 1]
    t = np.clip((pr * d[None, :, 0] + pc * d[None, :, 1]) / seg2[None, :], 0.0, 1.0)
    return np.hypot(pr - t * d[None, :, 0], pc - t * d[None, :, 1]).min(axis=1)


def fit_profile_to_band(
    mask: np.ndarray, start: SagittalProfile, half_width: float, ssa_starts: Sequence[float] = ()
) -> SagittalProfile:
    """Refine a profile so that its rendered band matches ``mask``.

    Every pixel near the band is compared with a soft-edged band of the model
    curve; the half width is fitted alongside the profile. The sacral segment
    is short, so each of ``ssa_starts`` (radians) is also tried as its starting
    angle and the lowest-cost fit wins.
    """
    near = ndimage.binary_dilation(mask, iterations=3)
    rows, cols = (idx.astype(np.float64) for idx in np.nonzero(near))
    target = mask[near].astype(np.float64)

    def residuals(params: np.ndarray) -> np.ndarray:
        profile = _profile(params)
        down, post, _ = profile.evaluate(_VERTICES)
        dist = distance_to_polyline(rows, cols, np.stack([down, post], axis=1))
        soft = 0.5 * (1.0 + np.tanh((params[7] - dist) / _EDGE_SOFTNESS))
        return np.concatenate([soft - target, _tilt_penalty(profile)])

    lower, upper = _bounds(start.length)
    lower, upper = lower + [0.25], upper + [max(3.0 * half_width, 1.0)]
    best = None
    for ssa in (start.ssa, *ssa_starts):
        x0 = np.array(
            [start.origin[0], start.origin[1], start.phi_top, start.tka, start.lla, ssa, start.length, half_width]
        )
        x0 = np.clip(x0, np.asarray(lower) + 1e-9, np.asarray(upper) - 1e-9)
        result = optimize.least_squares(residuals, x0, bounds=(lower, upper), method="trf", x_scale="jac")
        if best is None or result.cost < best.cost:
            best = result
    return _profile(best.x)


def fit_profile_to_points(points: np.ndarray, fractions: Sequence[float] = LATERAL_POINT_FRACTIONS) -> SagittalProfile:
    """Least-squares sagittal profile through (row, col) points at known arc fractions."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape != (len(fractions), 2):
        raise ShapeError(f"expected {len(fractions)} (row, col) points, got {points.shape}")
    span = max(float(points[-1, 0] - points[0, 0]), 1.0)

    def residuals(params: np.ndarray) -> np.ndarray:
        profile = _profile(params)
        down, post, _ = profile.evaluate(fractions)
        return np.concatenate([down - points[:, 0], post - points[:, 1], _tilt_penalty(profile)])

    lower, upper = _bounds(span)
    return _profile(_best_fit(residuals, (float(points[0, 0]), float(points[0, 1]), span), lower, upper))


def measure_sagittal_angles(source: Union[SpineModel3D, np.ndarray], threshold: float = 0.5) -> SagittalAngles:
    """TKA, LLA and SSA of a phantom model or a lateral curve map.

    A curve map is measured by fitting the straight/arc profile first to the
    band's row centroids and then to the band itself.

    Args:
        source: A :class:`SpineModel3D` (angles from vertebra frames) or a
            curve map [H,W] with rows pointing down and columns posterior.
        threshold: Binarisation threshold for curve maps.

    Raises:
        MeasurementError: if the curve map is too sparse to measure.
    """
    if isinstance(source, SpineModel3D):
        return angles_from_model(source)
    curve = np.asarray(source, dtype=np.float64)
    line = centerline(curve, threshold)
    coarse = fit_profile_to_centerline(line)
    refined = fit_profile_to_band(curve > threshold, coarse, line.band_width / 2.0, _SSA_STARTS)
    return angles_from_profile(refined)


def angles_from_radiograph(points: np.ndarray) -> SagittalAngles:
    """Angles from the eight lateral points (C7, six levels, ToC) of a radiograph."""
    return angles_from_profile(fit_profile_to_points(points))


# ---------------------------------------------------------------------------
# Agreement statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegressionStats:
    r2: float
    slope: float
    intercept: float
    mean_error: float
    ci_low: float
    ci_high: float
    n: int


def regression_stats(pred: Sequence[float], gt: Sequence[float], confidence: float = 0.95) -> RegressionStats:
    """OLS of predicted on ground-truth angles plus the mean error and its normal CI.

    Raises:
        MeasurementError: with fewer than three pairs.
    """
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"regression inputs differ in shape: {pred.shape} vs {gt.shape}")
    if pred.size < 3:
        raise MeasurementError(f"regression needs at least 3 pairs, got {pred.size}")
    errors = pred - gt
    mean_error = float(errors.mean())
    half = float(stats.norm.ppf(0.5 + confidence / 2.0) * errors.std(ddof=1) / math.sqrt(errors.size))
    if np.ptp(gt) == 0:
        slope, intercept, r2 = 0.0, float(pred.mean()), 0.0
    else:
        fit = stats.linregress(gt, pred)
        slope, intercept, r2 = float(fit.slope), float(fit.intercept), float(fit.rvalue**2)
    return RegressionStats(r2, slope, intercept, mean_error, mean_error - half, mean_error + half, int(pred.size))


def classify_angles(
    angles: SagittalAngles, ranges: Mapping[str, Tuple[float, float]] = NORMAL_RANGES
) -> Dict[str, bool]:
    """True where a parameter is abnormal (outside its closed normal range)."""
    values = angles.as_dict()
    return {name: not (ranges[name][0] <= values[name] <= ranges[name][1]) for name in ANGLE_NAMES}


@dataclass(frozen=True)
class Confusion:
    """2x2 counts with abnormal as the positive class."""

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def sensitivity(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def specificity(self) -> float:
        return self.tn / (self.tn + self.fp) if self.tn + self.fp else 0.0


def confusion(
    pred: Sequence[SagittalAngles],
    gt: Sequence[SagittalAngles],
    ranges: Mapping[str, Tuple[float, float]] = NORMAL_RANGES,
) -> Dict[str, Confusion]:
    """Per-parameter normal/abnormal confusion matrix."""
    if len(pred) != len(gt):
        raise ShapeError(f"{len(pred)} predictions for {len(gt)} ground-truth angle sets")
    counts = {name: [0, 0, 0, 0] for name in ANGLE_NAMES}
    for p, g in zip(pred, gt):
        p_flags, g_flags = classify_angles(p, ranges), classify_angles(g, ranges)
        for name in ANGLE_NAMES:
            slot = {(True, True): 0, (True, False): 1, (False, True): 2, (False, False): 3}[
                (p_flags[name], g_flags[name])
            ]
            counts[name][slot] += 1
    return {name: Confusion(*values) for name, values in counts.items()}


def angle_report(pred: Sequence[SagittalAngles], gt: Sequence[SagittalAngles]) -> Dict[str, float]:
    """Flat key=value report of regression and confusion results per parameter."""
    report: Dict[str, float] = {"n": len(pred)}
    matrices = confusion(pred, gt)
    for i, name in enumerate(ANGLE_NAMES):
        reg = regression_stats([p.as_tuple()[i] for p in pred], [g.as_tuple()[i] for g in gt])
        for key, value in asdict(reg).items():
            if key != "n":
                report[f"{name}_{key}"] = value
        m = matrices[name]
        report.update(
            {
                f"{name}_tp": m.tp,
                f"{name}_fp": m.fp,
                f"{name}_fn": m.fn,
                f"{name}_tn": m.tn,
                f"{name}_sensitivity": m.sensitivity,
                f"{name}_specificity": m.specificity,
            }
        )
    return report


# ---------------------------------------------------------------------------
# Reports and images
# ---------------------------------------------------------------------------


def render_csv(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
    return buffer.getvalue()


def write_scores_csv(path: Path, table: Mapping[str, SegScores]) -> None:
    """One row per label with accuracy, precision, sensitivity, F1, IoU."""
    rows = [[label] + [getattr(s, c) for c in SEG_COLUMNS] for label, s in table.items()]
    atomic_write_text(Path(path), render_csv(("label",) + SEG_COLUMNS, rows))


def write_psnr_csv(path: Path, table: Mapping[str, float]) -> None:
    atomic_write_text(Path(path), render_csv(("label", "psnr"), [[k, float(v)] for k, v in table.items()]))


def write_report(path: Path, values: Mapping[str, object]) -> None:
    atomic_write_text(Path(path), format_key_values(dict(values)))


def side_by_side(gt: np.ndarray, pred: np.ndarray, gap: int = 2) -> np.ndarray:
    """GT | prediction grid with a white separator column."""
    gt, pred = np.asarray(gt), np.asarray(pred)
    if gt.shape != pred.shape:
        raise ShapeError(f"grid images differ in shape: {gt.shape} vs {pred.shape}")
    separator = np.ones(gt.shape[:-1] + (gap,))
    return np.concatenate([gt, separator, pred], axis=-1)


def save_grid(path: Path, gt: np.ndarray, pred: np.ndarray) -> None:
    save_png8(Path(path), side_by_side(gt, pred))


# ---------------------------------------------------------------------------
# Directory evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    seg: SegScores
    psnr: float
    count: int
    per_sample: Dict[str, Dict[str, float]] = field(default_factory=dict)
    angles: Dict[str, float] = field(default_factory=dict)


def evaluate_directories(
    pred_dir: Path,
    gt_dir: Path,
    measure_angles: bool = False,
    grid_dir: Optional[Path] = None,
) -> EvalResult:
    """Compare ``pred_dir/<id>/{curve,xray}.png`` with ``gt_dir/<id>/{curve,xray}.png``.

    Samples without a prediction are skipped with a warning. Angle reports use
    the predicted curve maps against the ground-truth ``spec.txt`` angles.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    ids = sorted(p.name for p in gt_dir.iterdir() if (p / "curve.png").exists())
    scores: List[SegScores] = []
    psnrs: List[float] = []
    per_sample: Dict[str, Dict[str, float]] = {}
    pred_angles: List[SagittalAngles] = []
    gt_angles: List[SagittalAngles] = []

    for sample_id in ids:
        pred_path = pred_dir / sample_id
        if not (pred_path / "curve.png").exists():
            logger.warning(f"No prediction for {sample_id}; skipping")
            continue
        gt_curve = load_png_unit(gt_dir / sample_id / "curve.png")
        pred_curve = load_png_unit(pred_path / "curve.png")
        s = seg_scores(pred_curve, gt_curve)
        scores.append(s)
        entry = s.row()
        if (pred_path / "xray.png").exists() and (gt_dir / sample_id / "xray.png").exists():
            gt_xray = load_png_unit(gt_dir / sample_id / "xray.png")
            pred_xray = load_png_unit(pred_path / "xray.png")
            entry["psnr"] = psnr(pred_xray, gt_xray)
            psnrs.append(entry["psnr"])
            if grid_dir is not None:
                save_grid(Path(grid_dir) / f"{sample_id}_xray.png", gt_xray, pred_xray)
        if grid_dir is not None:
            save_grid(Path(grid_dir) / f"{sample_id}_curve.png", gt_curve, pred_curve)
        if measure_angles:
            try:
                pred_angles.append(measure_sagittal_angles(pred_curve))
            except MeasurementError as e:
                logger.warning(f"{sample_id}: {e.message}")
            else:
                spec = read_spec(gt_dir / sample_id / "spec.txt")
                gt_angles.append(SagittalAngles(*spec.angles))
        per_sample[sample_id] = entry

    finite = [v for v in psnrs if math.isfinite(v)]
    result = EvalResult(
        seg=mean_scores(scores),
        psnr=float(np.mean(finite)) if finite else (math.inf if psnrs else math.nan),
        count=len(scores),
        per_sample=per_sample,
    )
    if measure_angles and len(pred_angles) >= 3:
        result.angles = angle_report(pred_angles, gt_angles)
    elif measure_angles:
        logger.warning(f"Only {len(pred_angles)} measurable curve maps; angle report skipped")
    logger.info(f"Evaluated {result.count} samples: IoU {result.seg.iou:.4f}, PSNR {result.psnr:.3f} dB")
    return result
