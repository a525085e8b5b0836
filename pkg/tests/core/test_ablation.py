"""Tests for the ablation drivers on a tiny corpus."""
from pathlib import Path

import numpy as np
import pytest

from latxgen.core.ablation import ablate_rotation, ablate_sdn, ablate_sls, score_sme
from latxgen.core.dataset import Corpus
from latxgen.core.errors import PrerequisiteError
from latxgen.core.trainer import TrainConfig, load_sme, train_stage

TINY = TrainConfig(
    epochs=1,
    batch_size=2,
    channels=8,
    blocks=1,
    attn_dim=4,
    disc_channels=4,
    val_fraction=0.0,
)


def test_rotation_ablation_trains_one_model_per_angle(tiny_corpus: Corpus, tmp_path: Path) -> None:
    table = ablate_rotation(tiny_corpus, TINY, tmp_path, angles=(0.0, 30.0), workers=1)
    assert list(table) == ["0", "30"]
    assert (tmp_path / "theta_30" / "sme_final.lxgn").exists()
    lines = (tmp_path / "rotation.csv").read_text().splitlines()
    assert lines[0] == "label,accuracy,precision,sensitivity,f1,iou"
    assert [line.split(",")[0] for line in lines[1:]] == ["0", "30"]
    assert all(0.0 <= s.iou <= 1.0 for s in table.values())


def test_sdn_ablation(tiny_corpus: Corpus, tmp_path: Path) -> None:
    table = ablate_sdn(tiny_corpus, TINY, tmp_path, workers=1)
    assert set(table) == {"with_sdn", "without_sdn"}
    assert load_sme(tmp_path / "without_sdn" / "sme_final.lxgn").model.sdn is None
    assert (tmp_path / "sdn.csv").exists()


def test_sls_ablation_needs_landmark_network(tiny_corpus: Corpus, tmp_path: Path) -> None:
    sme = train_stage("sme", tiny_corpus, TINY, tmp_path / "sme", workers=1)
    with pytest.raises(PrerequisiteError, match="SLS"):
        ablate_sls(tiny_corpus, TINY, tmp_path / "ablate", sme.final_checkpoint, None, workers=1)


def test_score_sme_on_test_split(tiny_corpus: Corpus, tmp_path: Path) -> None:
    sme = train_stage("sme", tiny_corpus, TINY, tmp_path, workers=1)
    bundle = load_sme(sme.final_checkpoint)
    scores = score_sme(bundle, tiny_corpus.prepared("test", bundle.theta), batch_size=2)
    assert np.isfinite(scores.accuracy)
    assert scores.tp + scores.fp + scores.fn + scores.tn == 3 * 32 * 32
