"""Ablation drivers: view angle, spine-landmark loss and the deformation network."""
from __future__ import annotations

import logging
import math
from dataclasses import replace
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from .dataset import Corpus, PreparedSample, batch_indices, stack_batch
from .evaluation import SegScores, mean_scores, psnr, seg_scores, write_psnr_csv, write_scores_csv
from .lrs import LrsGenerator
from .tensor import Tensor, no_grad
from .trainer import SmeBundle, TrainConfig, load_lrs, load_sme, sme_conditioning, train_stage

logger = logging.getLogger(__name__)

ROTATION_ANGLES = (0.0, 30.0, 45.0, 60.0)


def score_sme(bundle: SmeBundle, samples: Sequence[PreparedSample], batch_size: int = 8) -> SegScores:
    """Mean segmentation scores of a trained curve generator."""
    scores = []
    for idx in batch_indices(len(samples), batch_size):
        batch = stack_batch([samples[i] for i in idx])
        pred = bundle.predict(batch["image"], batch["landmarks"])
        scores.extend(seg_scores(p[0], g[0]) for p, g in zip(pred, batch["curve"]))
    return mean_scores(scores)


def score_lrs(
    model: LrsGenerator, bundle: SmeBundle, samples: Sequence[PreparedSample], batch_size: int = 8
) -> float:
    """Mean PSNR of the full pipeline (SME-predicted conditioning)."""
    values = []
    model.eval()
    for idx in batch_indices(len(samples), batch_size):
        batch = stack_batch([samples[i] for i in idx])
        stacked = np.concatenate([batch["image"], sme_conditioning(bundle, batch)], axis=1)
        with no_grad():
            pred = model(Tensor(stacked)).data
        values.extend(psnr(p, g) for p, g in zip(pred, batch["radiograph"]))
    finite = [v for v in values if math.isfinite(v)]
    return float(np.mean(finite)) if finite else math.inf


def _test_samples(corpus: Corpus, config: TrainConfig, theta: float, workers: int):
    return corpus.prepared("test", theta, config.depth_offset, config.depth_scale, workers)


def ablate_rotation(
    corpus: Corpus,
    config: TrainConfig,
    out_dir: Path,
    angles: Sequence[float] = ROTATION_ANGLES,
    workers: int = 4,
) -> Dict[str, SegScores]:
    """Train the curve stage once per view angle and score each on the test split."""
    out_dir = Path(out_dir)
    table: Dict[str, SegScores] = {}
    for theta in angles:
        run_config = replace(config, stage="sme", theta=float(theta))
        run_dir = out_dir / f"theta_{theta:g}"
        result = train_stage("sme", corpus, run_config, run_dir, workers=workers)
        bundle = load_sme(result.final_checkpoint)
        table[f"{theta:g}"] = score_sme(bundle, _test_samples(corpus, run_config, theta, workers), config.batch_size)
        logger.info(f"theta={theta:g}: IoU {table[f'{theta:g}'].iou:.4f}")
    write_scores_csv(out_dir / "rotation.csv", table)
    return table


def ablate_sdn(corpus: Corpus, config: TrainConfig, out_dir: Path, workers: int = 4) -> Dict[str, SegScores]:
    """Curve stage with and without the spatial deformation network."""
    out_dir = Path(out_dir)
    table: Dict[str, SegScores] = {}
    for label, use_sdn in (("with_sdn", True), ("without_sdn", False)):
        run_config = replace(config, stage="sme", use_sdn=use_sdn)
        result = train_stage("sme", corpus, run_config, out_dir / label, workers=workers)
        bundle = load_sme(result.final_checkpoint)
        table[label] = score_sme(bundle, _test_samples(corpus, run_config, config.theta, workers), config.batch_size)
        logger.info(f"{label}: IoU {table[label].iou:.4f}")
    write_scores_csv(out_dir / "sdn.csv", table)
    return table


def ablate_sls(
    corpus: Corpus,
    config: TrainConfig,
    out_dir: Path,
    sme_checkpoint: Path,
    sls_checkpoint: Optional[Path],
    workers: int = 4,
) -> Dict[str, float]:
    """Radiograph stage with the configured gamma and with gamma = 0.

    Returns:
        PSNR per variant plus ``delta`` (with minus without).
    """
    out_dir = Path(out_dir)
    bundle = load_sme(sme_checkpoint)
    samples = _test_samples(corpus, config, bundle.theta, workers)
    table: Dict[str, float] = {}
    gamma_on = config.gamma if config.gamma > 0 else 3.0
    for label, gamma in (("with_sls", gamma_on), ("without_sls", 0.0)):
        run_config = replace(config, stage="lrs", gamma=gamma, theta=bundle.theta)
        result = train_stage(
            "lrs", corpus, run_config, out_dir / label, sme_checkpoint, sls_checkpoint, workers=workers
        )
        table[label] = score_lrs(load_lrs(result.final_checkpoint), bundle, samples, config.batch_size)
        logger.info(f"{label}: PSNR {table[label]:.3f} dB")
    table["delta"] = table["with_sls"] - table["without_sls"]
    write_psnr_csv(out_dir / "sls.csv", table)
    return table
