"""Tests for run manifests."""
from pathlib import Path

import pytest

from latxgen.core.manifest import MANIFEST_FILE, RunManifest
from latxgen.utils.helpers import sha256_bytes


@pytest.fixture
def run_dir(tmp_path: Path) -> Path:
    (tmp_path / "sme").mkdir()
    (tmp_path / "sme" / "sme_final.lxgn").write_bytes(b"weights")
    (tmp_path / "sme_log.csv").write_text("epoch\n1\n")
    (tmp_path / "run.log").write_text("started\n")
    (tmp_path / ".sme_final.lxgn-tmp-abc").write_bytes(b"partial")
    return tmp_path


def make_manifest() -> RunManifest:
    return RunManifest(command="train-sme", config_hash="abc", corpus_id="n6-seed21", seed=7)


def test_artifacts_are_hashed_by_relative_path(run_dir: Path) -> None:
    manifest = make_manifest()
    manifest.add_artifacts(run_dir)
    assert manifest.artifacts == {
        "sme/sme_final.lxgn": sha256_bytes(b"weights"),
        "sme_log.csv": sha256_bytes(b"epoch\n1\n"),
    }


def test_explicit_artifact_list(run_dir: Path) -> None:
    manifest = make_manifest()
    manifest.add_artifacts(run_dir, [run_dir / "sme_log.csv"])
    assert list(manifest.artifacts) == ["sme_log.csv"]


def test_verify_reports_changes(run_dir: Path) -> None:
    manifest = make_manifest()
    manifest.add_artifacts(run_dir)
    assert manifest.verify(run_dir) == []
    (run_dir / "sme_log.csv").write_text("epoch\n2\n")
    (run_dir / "sme" / "sme_final.lxgn").unlink()
    assert manifest.verify(run_dir) == ["sme/sme_final.lxgn: missing", "sme_log.csv: hash mismatch"]


def test_save_and_load(run_dir: Path) -> None:
    manifest = make_manifest()
    manifest.add_artifacts(run_dir)
    manifest.duration_seconds = 1.5
    path = manifest.save(run_dir)
    assert path.name == MANIFEST_FILE
    assert RunManifest.load(path) == manifest
