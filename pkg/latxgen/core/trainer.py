"""Adversarial training of both stages, SLS pretraining and checkpoint I/O.

Checkpoint namespaces::

    sme/...  disc_s/...     curve generator and its discriminator
    lrs/...  disc_l/...     radiograph generator and its discriminator
    sls/...                 frozen landmark network
    meta/...                landmark normalisation range, view angle, widths
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..utils.helpers import atomic_write_text, format_duration
from .augment import AugmentConfig, augment, sample_rng
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import Corpus, PreparedSample, batch_indices, landmark_stats, normalize_landmarks, stack_batch
from .errors import ConfigError, PrerequisiteError
from .evaluation import psnr, render_csv, seg_scores
from .losses import (
    LossWeights,
    discriminator_loss,
    generator_loss,
    l1_loss,
    lrs_objective,
    sls_loss,
    sme_objective,
)
from .lrs import LrsConfig, LrsDiscriminator, LrsGenerator
from .nn import Module
from .optim import Adam, update_lr
from .sls import SlsNet, SlsTrainSettings, pretrain_sls
from .sme import SmeConfig, SmeDiscriminator, SmeGenerator
from .tensor import Tensor, no_grad

if TYPE_CHECKING:
    from ..utils.config import Config

logger = logging.getLogger(__name__)

STAGES = ("sme", "lrs")
CHECKPOINT_SUFFIX = ".lxgn"
SME_COLUMNS = ("epoch", "lr", "L_D", "L_G", "L1", "SLS", "val_IoU")
LRS_COLUMNS = ("epoch", "lr", "L_D", "L_G", "L1", "SLS", "val_PSNR")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a training run; each field is a config-file key."""

    stage: str = "sme"
    epochs: int = 30
    batch_size: int = 8
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    theta: float = 45.0
    seed: int = 7
    augment_flip: bool = True
    augment_shift: bool = True
    augment_rotate: bool = True
    max_shift_fraction: float = 0.05
    max_rotation_deg: float = 5.0
    teacher_forcing: float = 0.5
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 3.0
    channels: int = 64
    blocks: int = 6
    global_ratio: float = 0.5
    attn_dim: int = 32
    disc_channels: int = 64
    use_sdn: bool = True
    use_attention: bool = True
    width: int = 96
    height: int = 128
    depth_offset: float = 1.5
    depth_scale: float = 0.5
    max_steps: int = 0
    sls_threshold: float = 0.002
    sls_max_epochs: int = 40
    val_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got '{self.stage}'")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.teacher_forcing <= 1.0:
            raise ConfigError(f"teacher_forcing must lie in [0, 1], got {self.teacher_forcing}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.max_steps < 0:
            raise ConfigError(f"max_steps must be >= 0, got {self.max_steps}")
        if not -90.0 <= self.theta <= 90.0:
            raise ConfigError(f"theta must lie in [-90, 90], got {self.theta}")

    @classmethod
    def from_config(cls, config: Config, **overrides) -> "TrainConfig":
        values = {f.name: config.get(f.name) for f in fields(cls)}
        values.update(overrides)
        return cls(**values)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma)

    @property
    def augmentation(self) -> AugmentConfig:
        return AugmentConfig.from_flags(
            self.augment_flip, self.augment_shift, self.augment_rotate, self.max_shift_fraction, self.max_rotation_deg
        )

    def sme_config(self) -> SmeConfig:
        return SmeConfig(
            blocks=self.blocks,
            channels=self.channels,
            global_ratio=self.global_ratio,
            attn_dim=self.attn_dim,
            use_sdn=self.use_sdn,
            use_attention=self.use_attention,
            disc_channels=self.disc_channels,
        )

    def lrs_config(self) -> LrsConfig:
        return LrsConfig(
            blocks=self.blocks,
            channels=self.channels,
            global_ratio=self.global_ratio,
            spectral_dim=self.attn_dim,
            disc_channels=self.disc_channels,
        )


# ---------------------------------------------------------------------------
# Checkpoint helpers
# ---------------------------------------------------------------------------


def _arch_entries(name: str, arch) -> Dict[str, np.ndarray]:
    return {f"meta/{name}.{f.name}": np.array([float(getattr(arch, f.name))]) for f in fields(arch)}


def _arch_from_entries(name: str, cls, entries: Dict[str, np.ndarray]):
    defaults = cls()
    values = {}
    for f in fields(cls):
        key = f"meta/{name}.{f.name}"
        if key in entries:
            kind = type(getattr(defaults, f.name))
            raw = float(entries[key][0])
            values[f.name] = bool(raw) if kind is bool else kind(raw)
    return cls(**values)


@dataclass
class SmeBundle:
    """A loaded curve generator with the normalisation it was trained with."""

    model: SmeGenerator
    landmark_min: np.ndarray
    landmark_max: np.ndarray
    theta: float
    depth_offset: float = 1.5
    depth_scale: float = 0.5

    def predict(self, images: np.ndarray, landmarks: np.ndarray) -> np.ndarray:
        """Curve maps [B,1,H,W] for raw inputs (landmarks in camera metres)."""
        normalized = normalize_landmarks(landmarks, self.landmark_min, self.landmark_max)
        self.model.eval()
        with no_grad():
            return self.model(Tensor(images), Tensor(normalized)).data


def sme_entries(
    model: SmeGenerator, disc: Optional[SmeDiscriminator], lo: np.ndarray, hi: np.ndarray, config: TrainConfig
) -> Dict[str, np.ndarray]:
    entries = model.state_dict("sme/")
    if disc is not None:
        entries.update(disc.state_dict("disc_s/"))
    entries.update(_arch_entries("sme", model.config))
    entries["meta/landmark_min"] = np.asarray(lo, dtype=np.float64)
    entries["meta/landmark_max"] = np.asarray(hi, dtype=np.float64)
    entries["meta/theta"] = np.array([config.theta])
    entries["meta/depth"] = np.array([config.depth_offset, config.depth_scale])
    return entries


def load_sme(path: Path) -> SmeBundle:
    """Rebuild the curve generator stored in a checkpoint.

    Raises:
        PrerequisiteError: if the file is missing.
        CheckpointError: if it is malformed or lacks ``sme/`` entries.
    """
    entries = load_checkpoint(path)
    config = _arch_from_entries("sme", SmeConfig, entries)
    model = SmeGenerator(config, np.random.default_rng(0))
    model.load_state_dict(entries, "sme/")
    depth = entries.get("meta/depth", np.array([1.5, 0.5]))
    return SmeBundle(
        model=model.eval(),
        landmark_min=entries["meta/landmark_min"],
        landmark_max=entries["meta/landmark_max"],
        theta=float(entries["meta/theta"][0]),
        depth_offset=float(depth[0]),
        depth_scale=float(depth[1]),
    )


def load_lrs(path: Path) -> LrsGenerator:
    entries = load_checkpoint(path)
    model = LrsGenerator(_arch_from_entries("lrs", LrsConfig, entries), np.random.default_rng(0))
    model.load_state_dict(entries, "lrs/")
    return model.eval()


def load_sls(path: Path) -> SlsNet:
    """Load and freeze the landmark network."""
    entries = load_checkpoint(path)
    net = SlsNet(np.random.default_rng(0))
    net.load_state_dict(entries, "sls/")
    return net.freeze()


def _require(path: Optional[Path], what: str) -> Path:
    if path is None or not Path(path).exists():
        raise PrerequisiteError(f"missing {what} checkpoint: {path}")
    return Path(path)


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


def split_validation(
    samples: Sequence[PreparedSample], fraction: float, seed: int
) -> Tuple[List[PreparedSample], List[PreparedSample]]:
    """(fit, validation) split of the training samples; validation may be empty."""
    n = len(samples)
    n_val = int(math.ceil(n * fraction)) if fraction > 0 and n > 1 else 0
    n_val = min(n_val, n - 1)
    order = np.random.default_rng([seed, 3]).permutation(n)
    val = set(int(i) for i in order[:n_val])
    fit = [s for i, s in enumerate(samples) if i not in val]
    return fit, [s for i, s in enumerate(samples) if i in val]


def _augmented(samples: Sequence[PreparedSample], idx: np.ndarray, config: TrainConfig, epoch: int):
    aug = config.augmentation
    return [augment(samples[i], sample_rng(config.seed, epoch, int(i)), aug) for i in idx]


def _batches(n: int, config: TrainConfig, epoch: int) -> List[np.ndarray]:
    return batch_indices(n, config.batch_size, np.random.default_rng([config.seed, 1, epoch]))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class StageResult:
    stage: str
    final_checkpoint: Path
    best_checkpoint: Path
    log_path: Path
    history: List[Dict[str, float]] = field(default_factory=list)
    best_metric: float = -math.inf
    steps: int = 0


class _MetricLog:
    """Rewrites the whole CSV after every epoch so the file is always complete."""

    def __init__(self, path: Path, columns: Sequence[str]):
        self.path = Path(path)
        self.columns = tuple(columns)
        self.rows: List[Dict[str, float]] = []

    def append(self, row: Dict[str, float]) -> None:
        self.rows.append(row)
        atomic_write_text(self.path, render_csv(self.columns, [[r[c] for c in self.columns] for r in self.rows]))


def _step_budget(config: TrainConfig, steps_per_epoch: int) -> int:
    total = config.epochs * steps_per_epoch
    return min(total, config.max_steps) if config.max_steps else total


def _adam(module: Module, config: TrainConfig) -> Adam:
    return Adam(module.parameters(), beta1=config.beta1, beta2=config.beta2, eps=config.eps)


def _adversarial_step(
    generator_out: Tensor,
    disc: Module,
    condition: Tensor,
    target: np.ndarray,
    d_opt: Adam,
    lr: float,
) -> float:
    """One discriminator update on (real, detached fake) pairs; returns L_D."""
    d_opt.zero_grad()
    loss_d = discriminator_loss(disc(condition, Tensor(target)), disc(condition, generator_out.detach()))
    loss_d.backward()
    d_opt.step(lr)
    d_opt.zero_grad()
    return loss_d.item()


def evaluate_sme(model: SmeGenerator, samples: Sequence[PreparedSample], lo, hi, batch_size: int = 8) -> float:
    """Mean curve IoU over ``samples`` in eval mode."""
    if not samples:
        return math.nan
    model.eval()
    ious = []
    with no_grad():
        for idx in batch_indices(len(samples), batch_size):
            batch = stack_batch([samples[i] for i in idx])
            pred = model(Tensor(batch["image"]), Tensor(normalize_landmarks(batch["landmarks"], lo, hi))).data
            ious.extend(seg_scores(p[0], g[0]).iou for p, g in zip(pred, batch["curve"]))
    model.train()
    return float(np.mean(ious))


def sme_conditioning(bundle: SmeBundle, batch: Dict[str, np.ndarray]) -> np.ndarray:
    return bundle.predict(batch["image"], batch["landmarks"])


def evaluate_lrs(
    model: LrsGenerator, bundle: SmeBundle, samples: Sequence[PreparedSample], batch_size: int = 8
) -> float:
    """Mean radiograph PSNR with SME-predicted curve maps as conditioning."""
    if not samples:
        return math.nan
    model.eval()
    values = []
    with no_grad():
        for idx in batch_indices(len(samples), batch_size):
            batch = stack_batch([samples[i] for i in idx])
            stacked = np.concatenate([batch["image"], sme_conditioning(bundle, batch)], axis=1)
            pred = model(Tensor(stacked)).data
            values.extend(psnr(p, g) for p, g in zip(pred, batch["radiograph"]))
    model.train()
    finite = [v for v in values if math.isfinite(v)]
    return float(np.mean(finite)) if finite else math.inf


def _train_sme(
    fit: List[PreparedSample], val: List[PreparedSample], config: TrainConfig, out_dir: Path
) -> StageResult:
    rng = np.random.default_rng(config.seed)
    model = SmeGenerator(config.sme_config(), rng)
    disc = SmeDiscriminator(config.sme_config(), rng)
    g_opt, d_opt = _adam(model, config), _adam(disc, config)
    lo, hi = landmark_stats(fit)
    weights = config.weights

    spe = len(batch_indices(len(fit), config.batch_size))
    total = _step_budget(config, spe)
    result = StageResult("sme", out_dir / f"sme_final{CHECKPOINT_SUFFIX}", out_dir / f"sme_best{CHECKPOINT_SUFFIX}", out_dir / "sme_log.csv")
    log = _MetricLog(result.log_path, SME_COLUMNS)
    step = 0

    for epoch in range(1, config.epochs + 1):
        sums = {"L_D": 0.0, "L_G": 0.0, "L1": 0.0}
        n_batches = 0
        lr = config.lr_max
        for idx in _batches(len(fit), config, epoch):
            if step >= total:
                break
            batch = stack_batch(_augmented(fit, idx, config, epoch))
            image = Tensor(batch["image"])
            landmarks = Tensor(normalize_landmarks(batch["landmarks"], lo, hi))
            lr = update_lr(step, total, config.lr_max, config.lr_min)

            fake = model(image, landmarks)
            loss_d = _adversarial_step(fake, disc, image, batch["curve"], d_opt, lr)

            g_opt.zero_grad()
            loss_g = generator_loss(disc(image, fake))
            loss_l1 = l1_loss(fake, batch["curve"])
            sme_objective(loss_g, loss_l1, weights).backward()
            g_opt.step(lr)
            disc.zero_grad()

            sums["L_D"] += loss_d
            sums["L_G"] += loss_g.item()
            sums["L1"] += loss_l1.item()
            n_batches += 1
            step += 1
            logger.debug(f"sme step {step}/{total}: L_D={loss_d:.4f} L_G={loss_g.item():.4f} L1={loss_l1.item():.4f}")
        if n_batches == 0:
            break
        val_iou = evaluate_sme(model, val, lo, hi, config.batch_size)
        row = {k: v / n_batches for k, v in sums.items()}
        row.update({"epoch": epoch, "lr": lr, "SLS": 0.0, "val_IoU": val_iou})
        log.append(row)
        result.history.append(row)
        logger.info(
            f"SME epoch {epoch}/{config.epochs}: L_D {row['L_D']:.4f}, L_G {row['L_G']:.4f}, "
            f"L1 {row['L1']:.4f}, val IoU {val_iou:.4f}"
        )
        metric = val_iou if math.isfinite(val_iou) else -row["L1"]
        if metric > result.best_metric:
            result.best_metric = metric
            save_checkpoint(result.best_checkpoint, sme_entries(model, disc, lo, hi, config))

    result.steps = step
    save_checkpoint(result.final_checkpoint, sme_entries(model, disc, lo, hi, config))
    return result


def _train_lrs(
    fit: List[PreparedSample],
    val: List[PreparedSample],
    config: TrainConfig,
    out_dir: Path,
    bundle: SmeBundle,
    sls: Optional[SlsNet],
) -> StageResult:
    rng = np.random.default_rng(config.seed)
    model = LrsGenerator(config.lrs_config(), rng)
    disc = LrsDiscriminator(config.lrs_config(), rng)
    g_opt, d_opt = _adam(model, config), _adam(disc, config)
    weights = config.weights
    forcing_rng = np.random.default_rng([config.seed, 2])

    spe = len(batch_indices(len(fit), config.batch_size))
    total = _step_budget(config, spe)
    result = StageResult("lrs", out_dir / f"lrs_final{CHECKPOINT_SUFFIX}", out_dir / f"lrs_best{CHECKPOINT_SUFFIX}", out_dir / "lrs_log.csv")
    log = _MetricLog(result.log_path, LRS_COLUMNS)
    step = 0

    def entries() -> Dict[str, np.ndarray]:
        out = model.state_dict("lrs/")
        out.update(disc.state_dict("disc_l/"))
        out.update(_arch_entries("lrs", model.config))
        if sls is not None:
            out.update(sls.state_dict("sls/"))
        out["meta/theta"] = np.array([config.theta])
        return out

    for epoch in range(1, config.epochs + 1):
        sums = {"L_D": 0.0, "L_G": 0.0, "L1": 0.0, "SLS": 0.0}
        n_batches = 0
        lr = config.lr_max
        for idx in _batches(len(fit), config, epoch):
            if step >= total:
                break
            batch = stack_batch(_augmented(fit, idx, config, epoch))
            forced = forcing_rng.random(len(idx)) < config.teacher_forcing
            curve = batch["curve"]
            if not forced.all():
                predicted = sme_conditioning(bundle, batch)
                curve = np.where(forced[:, None, None, None], batch["curve"], predicted)
            stacked = Tensor(np.concatenate([batch["image"], curve], axis=1))
            lr = update_lr(step, total, config.lr_max, config.lr_min)

            fake = model(stacked)
            loss_d = _adversarial_step(fake, disc, stacked, batch["radiograph"], d_opt, lr)

            g_opt.zero_grad()
            loss_g = generator_loss(disc(stacked, fake))
            loss_l1 = l1_loss(fake, batch["radiograph"])
            loss_sls = sls_loss(fake, batch["radiograph"], sls) if sls is not None else Tensor(0.0)
            lrs_objective(loss_g, loss_l1, loss_sls, weights).backward()
            g_opt.step(lr)
            disc.zero_grad()

            sums["L_D"] += loss_d
            sums["L_G"] += loss_g.item()
            sums["L1"] += loss_l1.item()
            sums["SLS"] += loss_sls.item()
            n_batches += 1
            step += 1
            logger.debug(f"lrs step {step}/{total}: L_D={loss_d:.4f} L_G={loss_g.item():.4f} SLS={loss_sls.item():.5f}")
        if n_batches == 0:
            break
        val_psnr = evaluate_lrs(model, bundle, val, config.batch_size)
        row = {k: v / n_batches for k, v in sums.items()}
        row.update({"epoch": epoch, "lr": lr, "val_PSNR": val_psnr})
        log.append(row)
        result.history.append(row)
        logger.info(
            f"LRS epoch {epoch}/{config.epochs}: L_D {row['L_D']:.4f}, L_G {row['L_G']:.4f}, "
            f"L1 {row['L1']:.4f}, SLS {row['SLS']:.5f}, val PSNR {val_psnr:.3f} dB"
        )
        metric = val_psnr if not math.isnan(val_psnr) else -row["L1"]
        if metric > result.best_metric:
            result.best_metric = metric
            save_checkpoint(result.best_checkpoint, entries())

    result.steps = step
    save_checkpoint(result.final_checkpoint, entries())
    return result


def train_stage(
    stage: str,
    corpus: Corpus,
    config: TrainConfig,
    out_dir: Path,
    sme_checkpoint: Optional[Path] = None,
    sls_checkpoint: Optional[Path] = None,
    workers: int = 4,
) -> StageResult:
    """Train one stage on the corpus training split.

    The LRS stage needs a trained SME checkpoint, and an SLS checkpoint when
    ``gamma > 0``. Writes ``<stage>_final.lxgn``, ``<stage>_best.lxgn`` and
    ``<stage>_log.csv`` under ``out_dir``.

    Raises:
        PrerequisiteError: naming a missing checkpoint or an empty corpus split.
        ConfigError: for an unknown stage.
    """
    if stage not in STAGES:
        raise ConfigError(f"unknown stage '{stage}', expected one of {STAGES}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    bundle = sls = None
    if stage == "lrs":
        bundle = load_sme(_require(sme_checkpoint, "SME"))
        if config.gamma > 0:
            sls = load_sls(_require(sls_checkpoint, "SLS"))

    samples = corpus.prepared("train", config.theta, config.depth_offset, config.depth_scale, workers)
    if not samples:
        raise PrerequisiteError(f"corpus {corpus.root} has no training samples")
    fit, val = split_validation(samples, config.val_fraction, config.seed)
    logger.info(f"Training {stage.upper()} on {len(fit)} samples ({len(val)} held out) at theta={config.theta:g}")

    started = time.monotonic()
    if stage == "sme":
        result = _train_sme(fit, val, config, out_dir)
    else:
        result = _train_lrs(fit, val, config, out_dir, bundle, sls)
    logger.info(f"{stage.upper()} finished {result.steps} steps in {format_duration(time.monotonic() - started)}")
    return result


def pretrain_sls_stage(corpus: Corpus, config: TrainConfig, out_dir: Path, workers: int = 4) -> StageResult:
    """Pretrain the landmark network on corpus radiographs and save ``sls.lxgn``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = corpus.prepared("train", 0.0, config.depth_offset, config.depth_scale, workers)
    if not samples:
        raise PrerequisiteError(f"corpus {corpus.root} has no training samples")
    fit, val = split_validation(samples, config.val_fraction, config.seed)
    settings = SlsTrainSettings(
        max_epochs=config.sls_max_epochs,
        batch_size=config.batch_size,
        lr_max=config.lr_max,
        lr_min=config.lr_min,
        threshold=config.sls_threshold,
        seed=config.seed,
    )
    net, history = pretrain_sls(fit, val, settings)
    path = out_dir / f"sls{CHECKPOINT_SUFFIX}"
    save_checkpoint(path, net.state_dict("sls/"))
    log_path = out_dir / "sls_log.csv"
    columns = ("epoch", "lr", "train_mse", "val_mse")
    atomic_write_text(log_path, render_csv(columns, [[row[c] for c in columns] for row in history]))
    return StageResult("sls", path, path, log_path, history, -history[-1]["val_mse"], len(history))
