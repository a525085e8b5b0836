"""Tests for stage training, SLS pretraining and checkpoint loading."""
import csv
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from latxgen.core.dataset import Corpus, stack_batch
from latxgen.core.errors import ConfigError, PrerequisiteError
from latxgen.core.trainer import (
    StageResult,
    TrainConfig,
    load_lrs,
    load_sls,
    load_sme,
    pretrain_sls_stage,
    split_validation,
    train_stage,
)
from latxgen.utils.config import Config

TINY = TrainConfig(
    epochs=2,
    batch_size=2,
    channels=8,
    blocks=1,
    attn_dim=4,
    disc_channels=4,
    width=32,
    height=32,
    theta=30.0,
    val_fraction=0.3,
    sls_max_epochs=2,
    sls_threshold=0.0,
)


@pytest.fixture(scope="module")
def sme_run(tiny_corpus_dir: Path, tmp_path_factory: pytest.TempPathFactory) -> StageResult:
    out = tmp_path_factory.mktemp("sme_run")
    return train_stage("sme", Corpus(tiny_corpus_dir), TINY, out, workers=1)


@pytest.fixture(scope="module")
def sls_run(tiny_corpus_dir: Path, tmp_path_factory: pytest.TempPathFactory) -> StageResult:
    out = tmp_path_factory.mktemp("sls_run")
    return pretrain_sls_stage(Corpus(tiny_corpus_dir), TINY, out, workers=1)


def read_rows(path: Path):
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        {"stage": "gan"},
        {"epochs": 0},
        {"batch_size": 0},
        {"teacher_forcing": 1.5},
        {"val_fraction": 1.0},
        {"max_steps": -1},
        {"theta": 120.0},
    ],
)
def test_invalid_train_config(kwargs) -> None:
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_train_config_from_config_with_overrides() -> None:
    config = Config(overrides={"epochs": "3", "use_sdn": "off"})
    train = TrainConfig.from_config(config, stage="lrs")
    assert train.epochs == 3
    assert train.use_sdn is False
    assert train.stage == "lrs"
    assert train.sme_config().use_sdn is False
    assert train.lrs_config().spectral_dim == train.attn_dim
    assert train.weights.gamma == 3.0


def test_split_validation_holds_out_a_fraction() -> None:
    fit, val = split_validation(list(range(10)), 0.1, seed=7)
    assert len(fit) == 9 and len(val) == 1
    assert sorted(fit + val) == list(range(10))
    assert split_validation(list(range(10)), 0.1, seed=7) == (fit, val)
    fit, val = split_validation([0], 0.5, seed=7)
    assert fit == [0] and val == []


# ---------------------------------------------------------------------------
# SME stage
# ---------------------------------------------------------------------------


def test_sme_run_writes_checkpoints_and_log(sme_run: StageResult) -> None:
    assert sme_run.final_checkpoint.name == "sme_final.lxgn"
    assert sme_run.final_checkpoint.exists()
    assert sme_run.best_checkpoint.exists()
    rows = read_rows(sme_run.log_path)
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert list(rows[0]) == ["epoch", "lr", "L_D", "L_G", "L1", "SLS", "val_IoU"]
    assert sme_run.steps == 2
    assert all(np.isfinite(row["L1"]) for row in sme_run.history)
    assert sme_run.history[0]["lr"] == pytest.approx(TINY.lr_max)
    assert sme_run.history[-1]["lr"] == pytest.approx(TINY.lr_min)


def test_loaded_sme_bundle_predicts_curves(sme_run: StageResult, tiny_corpus: Corpus) -> None:
    bundle = load_sme(sme_run.final_checkpoint)
    assert bundle.theta == 30.0
    assert bundle.model.config.channels == 8
    assert bundle.landmark_min.shape == (3,)
    batch = stack_batch(tiny_corpus.prepared("test", 30.0)[:2])
    curves = bundle.predict(batch["image"], batch["landmarks"])
    assert curves.shape == (2, 1, 32, 32)
    assert curves.min() >= 0.0 and curves.max() <= 1.0


def test_sme_training_is_reproducible(sme_run: StageResult, tiny_corpus_dir: Path, tmp_path: Path) -> None:
    again = train_stage("sme", Corpus(tiny_corpus_dir), TINY, tmp_path, workers=3)
    assert again.final_checkpoint.read_bytes() == sme_run.final_checkpoint.read_bytes()


def test_step_budget_stops_training_early(tiny_corpus: Corpus, tmp_path: Path) -> None:
    config = replace(TINY, epochs=3, max_steps=1)
    result = train_stage("sme", tiny_corpus, config, tmp_path, workers=1)
    assert result.steps == 1
    assert len(result.history) == 1


def test_sme_l1_after_200_steps_is_below_step_10(tiny_corpus: Corpus, tmp_path: Path) -> None:
    config = replace(
        TINY,
        epochs=200,
        batch_size=3,
        val_fraction=0.0,
        augment_flip=False,
        augment_shift=False,
        augment_rotate=False,
    )
    result = train_stage("sme", tiny_corpus, config, tmp_path, workers=1)
    rows = read_rows(result.log_path)
    assert result.steps == 200 and len(rows) == 200
    early = np.mean([float(r["L1"]) for r in rows[7:10]])
    late = np.mean([float(r["L1"]) for r in rows[-3:]])
    assert late < early
    assert float(rows[-1]["lr"]) == pytest.approx(config.lr_min)


# ---------------------------------------------------------------------------
# SLS pretraining and LRS stage
# ---------------------------------------------------------------------------


def test_sls_pretraining_saves_frozen_network(sls_run: StageResult) -> None:
    assert sls_run.final_checkpoint.name == "sls.lxgn"
    assert len(read_rows(sls_run.log_path)) == 2
    net = load_sls(sls_run.final_checkpoint)
    assert net.frozen


def test_lrs_needs_sme_checkpoint(tiny_corpus: Corpus, tmp_path: Path) -> None:
    with pytest.raises(PrerequisiteError, match="SME"):
        train_stage("lrs", tiny_corpus, TINY, tmp_path, sme_checkpoint=tmp_path / "missing.lxgn")


def test_lrs_needs_sls_checkpoint_when_gamma_positive(
    sme_run: StageResult, tiny_corpus: Corpus, tmp_path: Path
) -> None:
    with pytest.raises(PrerequisiteError, match="SLS"):
        train_stage("lrs", tiny_corpus, TINY, tmp_path, sme_checkpoint=sme_run.final_checkpoint)


def test_lrs_without_sls_term_skips_the_landmark_network(
    sme_run: StageResult, tiny_corpus: Corpus, tmp_path: Path
) -> None:
    config = replace(TINY, stage="lrs", gamma=0.0, epochs=1)
    result = train_stage("lrs", tiny_corpus, config, tmp_path, sme_checkpoint=sme_run.final_checkpoint)
    assert all(row["SLS"] == 0.0 for row in result.history)


def test_lrs_run_with_sls_term(
    sme_run: StageResult, sls_run: StageResult, tiny_corpus: Corpus, tmp_path: Path
) -> None:
    config = replace(TINY, stage="lrs")
    result = train_stage(
        "lrs",
        tiny_corpus,
        config,
        tmp_path,
        sme_checkpoint=sme_run.final_checkpoint,
        sls_checkpoint=sls_run.final_checkpoint,
        workers=1,
    )
    rows = read_rows(result.log_path)
    assert list(rows[0]) == ["epoch", "lr", "L_D", "L_G", "L1", "SLS", "val_PSNR"]
    assert all(row["SLS"] > 0.0 for row in result.history)
    model = load_lrs(result.final_checkpoint)
    assert model.config.channels == 8


def test_unknown_stage(tiny_corpus: Corpus, tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        train_stage("xray", tiny_corpus, TINY, tmp_path)
