"""Tests for the key=value configuration layer."""
from pathlib import Path

import pytest

from latxgen.core.errors import ConfigError
from latxgen.utils.config import Config


def test_defaults_without_file() -> None:
    config = Config()
    assert config.get("epochs") == 30
    assert config.get("use_sdn") is True
    assert config.get("missing", "fallback") == "fallback"


def test_file_values_are_coerced(tmp_path: Path) -> None:
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nepochs = 12\nlr_max=5e-4\nuse_attention=no\n\ntheta=30\n")
    config = Config(path)
    assert config.get("epochs") == 12
    assert config.get("lr_max") == 5e-4
    assert config.get("use_attention") is False
    assert config.get("theta") == 30.0
    assert isinstance(config.get("theta"), float)


def test_overrides_beat_file(tmp_path: Path) -> None:
    path = tmp_path / "run.cfg"
    path.write_text("seed=3\n")
    assert Config(path, {"seed": 11}).get("seed") == 11


@pytest.mark.parametrize(
    "key,value,message",
    [
        ("learning_rate", "0.1", "unknown config key"),
        ("epochs", "2.5", "expects int"),
        ("use_sdn", "maybe", "expects bool"),
        ("lr_max", "fast", "expects float"),
    ],
)
def test_invalid_values(key: str, value: str, message: str) -> None:
    with pytest.raises(ConfigError, match=message):
        Config().set(key, value)


def test_save_render_and_hash(tmp_path: Path) -> None:
    config = Config(overrides={"epochs": 5, "use_sdn": False})
    path = tmp_path / "saved.cfg"
    config.save(path)
    text = path.read_text()
    assert "epochs=5\n" in text
    assert "use_sdn=false\n" in text
    assert text.splitlines() == sorted(text.splitlines())
    reloaded = Config(path)
    assert reloaded.data == config.data
    assert reloaded.hash() == config.hash()
    assert Config().hash() != config.hash()


def test_save_without_target() -> None:
    with pytest.raises(ConfigError):
        Config().save()
