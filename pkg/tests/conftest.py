"""Shared fixtures: a tiny phantom corpus reused by the pipeline tests."""
from pathlib import Path

import pytest

from latxgen.core.dataset import Corpus
from latxgen.core.phantom import RenderSettings, generate_corpus

TINY_SETTINGS = RenderSettings(width=32, height=32, band_width=3, margin=4)


@pytest.fixture(scope="session")
def tiny_corpus_dir(tmp_path_factory: pytest.TempPathFactory) -> Path:
    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(6, 21, root, split_ratio=0.5, settings=TINY_SETTINGS, workers=2)
    return root


@pytest.fixture
def tiny_corpus(tiny_corpus_dir: Path) -> Corpus:
    return Corpus(tiny_corpus_dir)
