"""Procedural spine phantoms with exact sagittal-angle ground truth.

The sagittal profile of the spine is a chain of straight segments and circular
arcs laid out along the C7→ToC arc length::

    [0.00, 0.18]  straight         tangent angle phi_T5
    [0.18, 0.52]  kyphotic arc     turns by -TKA   (T5 superior → T12 inferior)
    [0.52, 0.57]  straight         phi_L1
    [0.57, 0.95]  lordotic arc     turns by +LLA   (L1 superior → S1 superior)
    [0.95, 1.00]  sacral segment   phi_S1 = SSA

``phi`` is the tangent angle from the downward vertical, positive toward the
posterior side (toward the camera). The lordotic arc meets the sacrum at S1
with a lumbosacral kink: LLA is read on the arriving lumbar tangent and SSA on
the sacral one, so TKA = phi_T5 - phi_T12, LLA = phi_S1(above) - phi_L1 and
SSA = phi_S1 hold exactly by construction. The column C7→S1 is rotated so
that S1 lies plumb below C7; a straight spine is therefore vertical whatever
its sacral slope.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import PhantomError
from .geometry import LANDMARK_NAMES, CameraIntrinsics, LandmarkSet3D, RGBDFrame, reproject

logger = logging.getLogger(__name__)

# Arc-length fractions of the profile breakpoints.
T5_SUPERIOR = 0.18
T12_INFERIOR = 0.52
L1_SUPERIOR = 0.57
S1_SUPERIOR = 0.95
LEVEL_FRACTIONS = {"T5": T5_SUPERIOR, "T12": T12_INFERIOR, "L1": L1_SUPERIOR, "S1": S1_SUPERIOR}

# C7, ToC and six level samples used by the landmark network on radiographs.
LATERAL_POINT_FRACTIONS: Tuple[float, ...] = (0.0, 0.18, 0.35, 0.52, 0.57, 0.76, 0.95, 1.0)
LATERAL_POINT_NAMES: Tuple[str, ...] = ("C7", "T5", "T8", "T12", "L1", "L3", "S1", "ToC")

MAX_TANGENT_DEG = 80.0
MAX_KINK_DEG = 80.0
CENTERLINE_SAMPLES = 200

NORMAL_RANGES: Dict[str, Tuple[float, float]] = {
    "tka": (20.0, 40.0),
    "lla": (20.0, 45.0),
    "ssa": (32.0, 49.0),
}


# ---------------------------------------------------------------------------
# Specs and settings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhantomSpec:
    """Generative parameters of one synthetic subject."""

    tka_deg: float
    lla_deg: float
    ssa_deg: float
    torso_width: float = 0.36
    torso_depth: float = 0.22
    noise_sigma: float = 0.001
    seed: int = 0

    def __post_init__(self) -> None:
        problems = []
        if not 0.0 <= self.tka_deg <= 70.0:
            problems.append(f"tka_deg={self.tka_deg} outside [0, 70]")
        if not 0.0 <= self.lla_deg <= 70.0:
            problems.append(f"lla_deg={self.lla_deg} outside [0, 70]")
        if not 10.0 <= self.ssa_deg <= 70.0:
            problems.append(f"ssa_deg={self.ssa_deg} outside [10, 70]")
        if self.noise_sigma < 0:
            problems.append(f"noise_sigma={self.noise_sigma} is negative")
        if self.torso_width <= 0 or self.torso_depth <= 0:
            problems.append("torso dimensions must be positive")
        if problems:
            raise PhantomError(problems)

    @property
    def angles(self) -> Tuple[float, float, float]:
        return self.tka_deg, self.lla_deg, self.ssa_deg

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class RenderSettings:
    """Image size, camera and anatomy scale shared by every sample of a corpus."""

    width: int = 96
    height: int = 128
    focal_scale: float = 1.0
    camera_distance: float = 1.5
    spine_length: float = 0.5
    spine_depth: float = 0.06
    band_width: int = 5
    margin: int = 8

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.centered(self.width, self.height, self.focal_scale)


@dataclass(frozen=True)
class SampleRanges:
    """Uniform sampling ranges for corpus specs (wider than the normal ranges)."""

    tka: Tuple[float, float] = (0.0, 70.0)
    lla: Tuple[float, float] = (0.0, 70.0)
    ssa: Tuple[float, float] = (10.0, 70.0)
    torso_width: Tuple[float, float] = (0.30, 0.40)
    torso_depth: Tuple[float, float] = (0.18, 0.26)
    noise_sigma: float = 0.001


# ---------------------------------------------------------------------------
# Sagittal profile
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SagittalProfile:
    """Piecewise straight/arc curve in the sagittal (down, posterior) plane.

    Lengths are in arbitrary units: metres for phantoms, pixels when fitting.
    """

    phi_top: float  # radians
    tka: float  # radians
    lla: float  # radians
    ssa: float  # radians
    length: float
    origin: Tuple[float, float] = (0.0, 0.0)

    @classmethod
    def balanced(cls, tka: float, lla: float, ssa: float, length: float) -> "SagittalProfile":
        """Profile whose C7→S1 chord is vertical."""
        upright = cls(phi_top=0.0, tka=tka, lla=lla, ssa=ssa, length=length)
        down, post, _ = upright.evaluate([0.0, S1_SUPERIOR])
        lean = math.atan2(post[1] - post[0], down[1] - down[0])
        return cls(phi_top=-lean, tka=tka, lla=lla, ssa=ssa, length=length)

    @property
    def phi_l1(self) -> float:
        return self.phi_top - self.tka

    @property
    def phi_lumbar(self) -> float:
        """Tangent of the lordotic arc where it reaches S1."""
        return self.phi_l1 + self.lla

    @property
    def phi_s1(self) -> float:
        return self.ssa

    @property
    def kink(self) -> float:
        """Lumbosacral turn at S1."""
        return self.ssa - self.phi_lumbar

    def _segments(self) -> List[Tuple[float, float, float, float]]:
        """(start fraction, end fraction, start angle, curvature per unit length)."""
        L = self.length
        k_kyph = -self.tka / ((T12_INFERIOR - T5_SUPERIOR) * L)
        k_lord = self.lla / ((S1_SUPERIOR - L1_SUPERIOR) * L)
        return [
            (0.0, T5_SUPERIOR, self.phi_top, 0.0),
            (T5_SUPERIOR, T12_INFERIOR, self.phi_top, k_kyph),
            (T12_INFERIOR, L1_SUPERIOR, self.phi_l1, 0.0),
            (L1_SUPERIOR, S1_SUPERIOR, self.phi_l1, k_lord),
            (S1_SUPERIOR, 1.0, self.ssa, 0.0),
        ]

    def evaluate(
        self, fractions: Sequence[float], from_above: bool = False
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (down, posterior, phi) at the given arc-length fractions.

        Fractions outside [0, 1] extend the end segments straight. At a
        breakpoint the lower segment's tangent is returned unless
        ``from_above`` is set.
        """
        f = np.atleast_1d(np.asarray(fractions, dtype=np.float64))
        down = np.empty_like(f)
        post = np.empty_like(f)
        phi = np.empty_like(f)
        segments = self._segments()
        y, p = self.origin
        for index, (f0, f1, phi0, kappa) in enumerate(segments):
            lower = -np.inf if index == 0 else f0
            upper = np.inf if index == len(segments) - 1 else f1
            if from_above:
                mask = (f > lower) & (f <= upper)
            else:
                mask = (f >= lower) & (f < upper)
            if mask.any():
                ds = (f[mask] - f0) * self.length
                down[mask], post[mask] = _advance(y, p, phi0, kappa, ds)
                phi[mask] = phi0 + kappa * ds
            y, p = _advance(y, p, phi0, kappa, (f1 - f0) * self.length)
        return down, post, phi

    def max_abs_angle(self) -> float:
        return max(abs(self.phi_top), abs(self.phi_l1), abs(self.phi_lumbar), abs(self.phi_s1))


def _advance(y, p, phi0: float, kappa: float, ds):
    """Position after travelling ``ds`` from (y, p) at angle phi0 with curvature kappa."""
    if abs(kappa) < 1e-15:
        return y + np.cos(phi0) * ds, p + np.sin(phi0) * ds
    phi = phi0 + kappa * ds
    return y + (np.sin(phi) - math.sin(phi0)) / kappa, p - (np.cos(phi) - math.cos(phi0)) / kappa


def profile_violations(profile: SagittalProfile) -> List[str]:
    """Tangent and lumbosacral-kink limits the profile breaks, if any."""
    violations = []
    limit = math.radians(MAX_TANGENT_DEG)
    for label, value in (("T5", profile.phi_top), ("L1", profile.phi_l1), ("S1", profile.phi_lumbar)):
        if abs(value) >= limit:
            violations.append(
                f"tangent at {label} is {math.degrees(value):.1f} deg, beyond +/-{MAX_TANGENT_DEG:.0f} deg"
            )
    if abs(profile.kink) >= math.radians(MAX_KINK_DEG):
        violations.append(
            f"lumbosacral kink at S1 is {math.degrees(profile.kink):.1f} deg, beyond +/-{MAX_KINK_DEG:.0f} deg "
            f"(SSA minus the lordotic tangent reaching S1)"
        )
    return violations


def profile_for_spec(spec: PhantomSpec, length: float) -> SagittalProfile:
    """Balanced profile whose measured TKA/LLA/SSA equal the spec's.

    Raises:
        PhantomError: if a tangent tilts beyond 80 degrees from vertical or the
            sacrum turns more than 80 degrees away from the lordotic arc.
    """
    tka, lla, ssa = (math.radians(a) for a in spec.angles)
    profile = SagittalProfile.balanced(tka, lla, ssa, length)
    violations = profile_violations(profile)
    if violations:
        raise PhantomError(violations)
    return profile


# ---------------------------------------------------------------------------
# Spine model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VertebraFrame:
    """One vertebral body placed on the profile.

    ``axes`` rows are (inferior tangent direction, anterior normal, lateral x),
    all in camera coordinates at the body's centre.
    """

    name: str
    superior_fraction: float
    inferior_fraction: float
    center: np.ndarray
    axes: np.ndarray
    superior_tangent: np.ndarray
    inferior_tangent: np.ndarray
    height: float
    depth: float = 0.032
    width: float = 0.040
    # tangent reaching the superior endplate from above; differs only at S1
    approach_tangent: Optional[np.ndarray] = None


@dataclass
class SpineModel3D:
    """Centerline samples and vertebra frames of one phantom, in camera space."""

    spec: PhantomSpec
    settings: RenderSettings
    profile: SagittalProfile
    fractions: np.ndarray
    centerline: np.ndarray
    vertebrae: List[VertebraFrame] = field(default_factory=list)
    y_offset: float = 0.0
    p_reference: float = 0.0

    def vertebra(self, name: str) -> VertebraFrame:
        for v in self.vertebrae:
            if v.name == name:
                return v
        raise KeyError(name)

    def to_camera(self, down: np.ndarray, post: np.ndarray, lateral: np.ndarray = 0.0) -> np.ndarray:
        """Sagittal (down, posterior) → camera (x, y, z) for the spine centreline."""
        down, post = np.broadcast_arrays(np.asarray(down, float), np.asarray(post, float))
        z = self.settings.camera_distance + self.settings.spine_depth - (post - self.p_reference)
        x = np.broadcast_to(np.asarray(lateral, float), down.shape)
        return np.stack([x, down - self.y_offset, z], axis=-1)


def _vertebra_layout() -> List[Tuple[str, float, float]]:
    """(name, superior fraction, inferior fraction) for T1..L5 and S1."""
    out = []
    unit = 0.04
    for i in range(4):
        top = 0.02 + i * unit
        out.append((f"T{i + 1}", top, top + 0.8 * unit))
    unit = (T12_INFERIOR - T5_SUPERIOR) / 7.8
    for i in range(8):
        top = T5_SUPERIOR + i * unit
        out.append((f"T{i + 5}", top, top + 0.8 * unit))
    unit = (S1_SUPERIOR - L1_SUPERIOR) / 5.0
    for i in range(5):
        top = L1_SUPERIOR + i * unit
        out.append((f"L{i + 1}", top, top + 0.8 * unit))
    out.append(("S1", S1_SUPERIOR, S1_SUPERIOR + 0.9 * (1.0 - S1_SUPERIOR)))
    return out


def _tangent(phi: float) -> np.ndarray:
    # down = +Y, posterior = -Z
    return np.array([0.0, math.cos(phi), -math.sin(phi)])


def build_spine(spec: PhantomSpec, settings: Optional[RenderSettings] = None) -> SpineModel3D:
    """Lay the arc profile out in camera space and place the vertebrae on it.

    Raises:
        PhantomError: if the angle combination is infeasible.
    """
    settings = settings or RenderSettings()
    profile = profile_for_spec(spec, settings.spine_length)
    fractions = np.linspace(0.0, 1.0, CENTERLINE_SAMPLES)
    down, post, _ = profile.evaluate(fractions)

    model = SpineModel3D(
        spec=spec,
        settings=settings,
        profile=profile,
        fractions=fractions,
        centerline=np.zeros((CENTERLINE_SAMPLES, 3)),
        y_offset=float((down.min() + down.max()) / 2.0),
        p_reference=float(post.mean()),
    )
    model.centerline = model.to_camera(down, post)

    for name, sup, inf in _vertebra_layout():
        mid = (sup + inf) / 2.0
        (yc,), (pc,), (phic,) = profile.evaluate([mid])
        phis = profile.evaluate([sup])[2][0]
        phia = profile.evaluate([sup], from_above=True)[2][0]
        phii = profile.evaluate([inf])[2][0]
        tangent = _tangent(phic)
        anterior = np.array([0.0, math.sin(phic), math.cos(phic)])
        axes = np.stack([tangent, anterior, np.array([1.0, 0.0, 0.0])])
        model.vertebrae.append(
            VertebraFrame(
                name=name,
                superior_fraction=sup,
                inferior_fraction=inf,
                center=model.to_camera(yc, pc),
                axes=axes,
                superior_tangent=_tangent(phis),
                inferior_tangent=_tangent(phii),
                height=(inf - sup) * settings.spine_length,
                approach_tangent=_tangent(phia),
            )
        )
    return model


def tangent_angle(tangent: np.ndarray) -> float:
    """Signed sagittal tangent angle (degrees) of a camera-space direction."""
    return math.degrees(math.atan2(-tangent[2], tangent[1]))


# ---------------------------------------------------------------------------
# Posterior rendering
# ---------------------------------------------------------------------------

_RIDGE_OFFSET = 0.04
_RIDGE_HEIGHT = 0.012
_RIDGE_SIGMA = 0.022
_GROOVE_DEPTH = 0.004
_GROOVE_SIGMA = 0.010
_SAMPLE_STEP = 0.004


def _back_depth_offset(x: np.ndarray, spec: PhantomSpec) -> np.ndarray:
    """Depth of the back surface relative to the midline skin, as a function of x."""
    half_w = spec.torso_width / 2.0
    half_d = spec.torso_depth / 2.0
    r = np.clip(x / half_w, -1.0, 1.0)
    ellipse = half_d * (1.0 - np.sqrt(1.0 - r * r))
    ridges = _RIDGE_HEIGHT * (
        np.exp(-((x - _RIDGE_OFFSET) ** 2) / (2 * _RIDGE_SIGMA**2))
        + np.exp(-((x + _RIDGE_OFFSET) ** 2) / (2 * _RIDGE_SIGMA**2))
    )
    groove = _GROOVE_DEPTH * np.exp(-(x**2) / (2 * _GROOVE_SIGMA**2))
    return ellipse - ridges + groove


def _surface_points(spine: SpineModel3D, fractions: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Back-surface grid [len(fractions), len(xs), 3] following the spine profile."""
    down, post, _ = spine.profile.evaluate(fractions)
    skin = spine.to_camera(down, post) - np.array([0.0, 0.0, spine.settings.spine_depth])
    grid = np.repeat(skin[:, None, :], xs.size, axis=1)
    grid[..., 0] = xs[None, :]
    grid[..., 2] += _back_depth_offset(xs, spine.spec)[None, :]
    return grid


def landmark_points(spine: SpineModel3D) -> LandmarkSet3D:
    """Midline back-surface points at C7, each vertebra's body centre and ToC."""
    fractions = [0.0]
    for v in spine.vertebrae:
        fractions.append((v.superior_fraction + v.inferior_fraction) / 2.0)
    fractions.append(1.0)
    points = _surface_points(spine, np.asarray(fractions), np.array([0.0]))[:, 0, :]
    return LandmarkSet3D(points, LANDMARK_NAMES)


def render_posterior(spine: SpineModel3D, spec: Optional[PhantomSpec] = None) -> RGBDFrame:
    """Posterior RGB-D view of the phantom's back.

    The surface is sampled densely and splatted through the pinhole camera;
    Gaussian noise with std ``noise_sigma`` is added to valid depths only.
    """
    spec = spec or spine.spec
    settings = spine.settings
    intrinsics = settings.intrinsics()
    extent = 1.16 * settings.spine_length
    n_rows = int(math.ceil(extent / _SAMPLE_STEP)) + 1
    n_cols = int(math.ceil(spec.torso_width / _SAMPLE_STEP)) + 1
    fractions = np.linspace(-0.08, 1.08, n_rows)
    xs = np.linspace(-spec.torso_width / 2.0, spec.torso_width / 2.0, n_cols)
    grid = _surface_points(spine, fractions, xs)

    d_frac = np.gradient(grid, axis=0)
    d_x = np.gradient(grid, axis=1)
    normals = np.cross(d_x, d_frac)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    to_camera = -grid / np.linalg.norm(grid, axis=-1, keepdims=True)
    lambert = np.abs((normals * to_camera).sum(axis=-1))
    shade = 0.2 + 0.75 * lambert

    points = grid.reshape(-1, 3)
    colors = np.repeat(shade.reshape(-1, 1), 3, axis=1)
    rgb, depth, valid = reproject(points, colors, intrinsics)

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        noise = rng.normal(0.0, spec.noise_sigma, size=depth.shape)
        depth = np.where(valid, np.maximum(depth + noise, 1e-6), 0.0)

    return RGBDFrame(
        rgb=np.clip(rgb, 0.0, 1.0),
        depth=depth,
        intrinsics=intrinsics,
        landmarks=landmark_points(spine),
        valid=valid,
    )


# ---------------------------------------------------------------------------
# Lateral ground truth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LateralView:
    """Orthographic sagittal projection: row grows downward, column posteriorly."""

    scale: float
    down0: float
    post0: float
    row0: float
    col0: float

    def to_pixels(self, down: np.ndarray, post: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        rows = self.row0 + self.scale * (np.asarray(down) - self.down0)
        cols = self.col0 + self.scale * (np.asarray(post) - self.post0)
        return rows, cols

    def to_sagittal(self, rows: np.ndarray, cols: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        down = self.down0 + (np.asarray(rows) - self.row0) / self.scale
        post = self.post0 + (np.asarray(cols) - self.col0) / self.scale
        return down, post


def lateral_view(spine: SpineModel3D) -> LateralView:
    """Isotropic mapping that fits the C7→ToC curve inside the margins, centred."""
    s = spine.settings
    down, post, _ = spine.profile.evaluate(spine.fractions)
    span_down = float(down.max() - down.min())
    span_post = max(float(post.max() - post.min()), 1e-9)
    scale = min((s.height - 1 - 2 * s.margin) / span_down, (s.width - 1 - 2 * s.margin) / span_post)
    row0 = (s.height - 1) / 2.0 - scale * span_down / 2.0
    col0 = (s.width - 1) / 2.0 - scale * span_post / 2.0
    return LateralView(scale, float(down.min()), float(post.min()), row0, col0)


def _polyline_distance(rows: np.ndarray, cols: np.ndarray, height: int, width: int) -> np.ndarray:
    """Distance from every pixel centre to the polyline through (rows, cols)."""
    rr, cc = np.mgrid[0:height, 0:width].astype(np.float64)
    best = np.full((height, width), np.inf)
    for i in range(rows.size - 1):
        ar, ac = rows[i], cols[i]
        dr, dc = rows[i + 1] - ar, cols[i + 1] - ac
        seg2 = dr * dr + dc * dc
        t = 0.0 if seg2 == 0 else np.clip(((rr - ar) * dr + (cc - ac) * dc) / seg2, 0.0, 1.0)
        dist = np.hypot(rr - (ar + t * dr), cc - (ac + t * dc))
        np.minimum(best, dist, out=best)
    return best


def render_curve_map(spine: SpineModel3D, view: Optional[LateralView] = None) -> np.ndarray:
    """Binary band of width ``band_width`` px around the lateral centreline."""
    s = spine.settings
    view = view or lateral_view(spine)
    down, post, _ = spine.profile.evaluate(spine.fractions)
    rows, cols = view.to_pixels(down, post)
    dist = _polyline_distance(rows, cols, s.height, s.width)
    return (dist <= s.band_width / 2.0).astype(np.float64)


_TISSUE_DENSITY = 1.0
_BONE_DENSITY = 6.0


def render_radiograph(
    spine: SpineModel3D, view: Optional[LateralView] = None, spec: Optional[PhantomSpec] = None
) -> np.ndarray:
    """Lateral ray sum through a soft-tissue ellipse plus vertebral boxes, in [0,1]."""
    s = spine.settings
    spec = spec or spine.spec
    view = view or lateral_view(spine)
    rr, cc = np.mgrid[0 : s.height, 0 : s.width].astype(np.float64)
    down, post = view.to_sagittal(rr, cc)

    # torso cross-section: ellipse in (x, posterior) whose posterior edge is the skin
    f_dense = np.linspace(-0.15, 1.15, 400)
    d_dense, p_dense, _ = spine.profile.evaluate(f_dense)
    order = np.argsort(d_dense)
    spine_post = np.interp(down, d_dense[order], p_dense[order])
    half_w = spec.torso_width / 2.0
    half_d = spec.torso_depth / 2.0
    centre = spine_post + s.spine_depth - half_d
    r = (post - centre) / half_d
    tissue = 2.0 * half_w * np.sqrt(np.clip(1.0 - r * r, 0.0, None))
    density = _TISSUE_DENSITY * tissue

    for v in spine.vertebrae:
        mid = (v.superior_fraction + v.inferior_fraction) / 2.0
        (yc,), (pc,), (phi,) = spine.profile.evaluate([mid])
        t = np.array([math.cos(phi), math.sin(phi)])
        n = np.array([-math.sin(phi), math.cos(phi)])
        du, dp = down - yc, post - pc
        along = du * t[0] + dp * t[1]
        across = du * n[0] + dp * n[1]
        inside = (np.abs(along) <= v.height / 2.0) & (np.abs(across) <= v.depth / 2.0)
        density = density + _BONE_DENSITY * v.width * inside

    peak = density.max()
    return density / peak if peak > 0 else density


def lateral_points(spine: SpineModel3D, view: Optional[LateralView] = None) -> np.ndarray:
    """(row, col) of C7, ToC and the six level samples on the lateral image, [8,2]."""
    view = view or lateral_view(spine)
    down, post, _ = spine.profile.evaluate(LATERAL_POINT_FRACTIONS)
    rows, cols = view.to_pixels(down, post)
    return np.stack([rows, cols], axis=1)


def render_lateral_gt(spine: SpineModel3D, spec: Optional[PhantomSpec] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Curve map and radiograph sharing one lateral view."""
    view = lateral_view(spine)
    return render_curve_map(spine, view), render_radiograph(spine, view, spec)


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------


def sample_spec(rng: np.random.Generator, seed: int, ranges: SampleRanges, max_tries: int = 1000) -> PhantomSpec:
    """Draw a feasible spec, redrawing infeasible angle combinations."""
    for _ in range(max_tries):
        spec = PhantomSpec(
            tka_deg=float(rng.uniform(*ranges.tka)),
            lla_deg=float(rng.uniform(*ranges.lla)),
            ssa_deg=float(rng.uniform(*ranges.ssa)),
            torso_width=float(rng.uniform(*ranges.torso_width)),
            torso_depth=float(rng.uniform(*ranges.torso_depth)),
            noise_sigma=ranges.noise_sigma,
            seed=seed,
        )
        try:
            profile_for_spec(spec, 1.0)
        except PhantomError as e:
            logger.debug(f"seed {seed}: redrawing infeasible spec ({e.message})")
            continue
        return spec
    raise PhantomError([f"no feasible spec found for seed {seed} after {max_tries} draws"])


@dataclass
class PhantomSample:
    """Everything generated for one subject."""

    sample_id: str
    spec: PhantomSpec
    spine: SpineModel3D
    frame: RGBDFrame
    curve: np.ndarray
    radiograph: np.ndarray
    points: np.ndarray


def make_sample(index: int, seed: int, ranges: SampleRanges, settings: RenderSettings) -> PhantomSample:
    sample_seed = seed + index
    spec = sample_spec(np.random.default_rng(sample_seed), sample_seed, ranges)
    spine = build_spine(spec, settings)
    view = lateral_view(spine)
    return PhantomSample(
        sample_id=f"sample_{index:05d}",
        spec=spec,
        spine=spine,
        frame=render_posterior(spine, spec),
        curve=render_curve_map(spine, view),
        radiograph=render_radiograph(spine, view),
        points=lateral_points(spine, view),
    )


def split_assignment(n: int, seed: int, split_ratio: float) -> List[str]:
    """'train'/'test' label per sample index; both splits are non-empty."""
    n_train = min(max(int(round(n * split_ratio)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    labels = ["test"] * n
    for i in order[:n_train]:
        labels[int(i)] = "train"
    return labels


def generate_corpus(
    n: int,
    seed: int,
    out_dir: Path,
    split_ratio: float = 0.8,
    ranges: Optional[SampleRanges] = None,
    settings: Optional[RenderSettings] = None,
    workers: int = 4,
) -> Dict[str, object]:
    """Render ``n`` phantoms into ``out_dir`` and write ``corpus.json``.

    Sample ``i`` uses seed ``seed + i`` so output does not depend on the number
    of workers.

    Returns:
        The corpus manifest.

    Raises:
        PhantomError: if ``n < 2``.
        OSError: on I/O failure.
    """
    from .dataset import write_corpus_manifest, write_sample  # dataset imports phantom

    if n < 2:
        raise PhantomError([f"corpus needs at least 2 samples, got n={n}"])
    ranges = ranges or SampleRanges()
    settings = settings or RenderSettings()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = split_assignment(n, seed, split_ratio)

    def work(index: int) -> str:
        sample = make_sample(index, seed, ranges, settings)
        write_sample(out_dir / "samples" / sample.sample_id, sample)
        return sample.sample_id

    logger.info(f"Generating {n} phantoms into {out_dir} with {workers} workers")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        ids = list(pool.map(work, range(n)))

    manifest = {
        "n": n,
        "seed": seed,
        "split_ratio": split_ratio,
        "settings": asdict(settings),
        "ranges": asdict(ranges),
        "level_fractions": LEVEL_FRACTIONS,
        "lateral_point_fractions": list(LATERAL_POINT_FRACTIONS),
        "samples": [{"id": sid, "split": label} for sid, label in zip(ids, labels)],
    }
    write_corpus_manifest(out_dir, manifest)
    logger.info(f"Corpus ready: {labels.count('train')} train / {labels.count('test')} test")
    return manifest
