"""Configuration management for latxgen runs.

Config files are flat ``key=value`` text with ``#`` comments. Every key must
be one of :attr:`Config.DEFAULTS`; values are coerced to the default's type.
"""
import hashlib
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from ..core.errors import ConfigError
from .helpers import atomic_write_text, parse_key_values

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


class Config:
    """Hold training/run configuration backed by an optional key=value file."""

    # Desk-scale defaults; full-scale values (400 epochs, batch 10, 300x400) are valid overrides.
    DEFAULTS: Dict[str, Any] = {
        "stage": "sme",
        "epochs": 30,
        "batch_size": 8,
        "lr_max": 1e-3,
        "lr_min": 1e-5,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "theta": 45.0,
        "seed": 7,
        "augment_flip": True,
        "augment_shift": True,
        "augment_rotate": True,
        "max_shift_fraction": 0.05,
        "max_rotation_deg": 5.0,
        "teacher_forcing": 0.5,
        "alpha": 0.5,
        "beta": 0.5,
        "gamma": 3.0,
        "channels": 64,
        "blocks": 6,
        "global_ratio": 0.5,
        "attn_dim": 32,
        "disc_channels": 64,
        "use_sdn": True,
        "use_attention": True,
        "width": 96,
        "height": 128,
        "depth_offset": 1.5,
        "depth_scale": 0.5,
        "max_steps": 0,
        "sls_threshold": 0.002,
        "sls_max_epochs": 40,
        "val_fraction": 0.1,
    }

    def __init__(self, config_file: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None):
        """Initialize configuration from defaults, then the file, then overrides."""
        self.config_file = Path(config_file) if config_file else None
        self.data: Dict[str, Any] = self.DEFAULTS.copy()
        if self.config_file is not None:
            self.load()
        for key, value in (overrides or {}).items():
            self.set(key, value)

    def load(self) -> None:
        """Load configuration from file.

        Raises:
            ConfigError: on an unknown key or a value of the wrong type.
            OSError: if the file cannot be read.
        """
        if self.config_file is None:
            return
        parsed = parse_key_values(self.config_file.read_text(encoding="utf-8"))
        for key, raw in parsed.items():
            self.data[key] = self._coerce(key, raw)

    def save(self, path: Optional[Path] = None) -> None:
        """Save configuration to file."""
        target = Path(path) if path else self.config_file
        if target is None:
            raise ConfigError("no config file to save to")
        atomic_write_text(target, self.render())

    def get(self, key: str, default: Optional[Any] = None) -> Any:
        """Get configuration value."""
        return self.data.get(key, default)

    def set(self, key: str, value: Any) -> None:
        """Set configuration value (strings are coerced like file values)."""
        self.data[key] = self._coerce(key, value)

    def render(self) -> str:
        """Canonical rendering: sorted ``key=value`` lines."""
        return "".join(f"{key}={_format(self.data[key])}\n" for key in sorted(self.data))

    def hash(self) -> str:
        """SHA-256 of :meth:`render`, recorded in run manifests."""
        return hashlib.sha256(self.render().encode("utf-8")).hexdigest()

    def _coerce(self, key: str, value: Any) -> Any:
        if key not in self.DEFAULTS:
            raise ConfigError(f"unknown config key '{key}'")
        default = self.DEFAULTS[key]
        try:
            if isinstance(default, bool):
                if isinstance(value, bool):
                    return value
                text = str(value).strip().lower()
                if text in _TRUE:
                    return True
                if text in _FALSE:
                    return False
                raise ValueError(value)
            if isinstance(default, int):
                number = float(value)
                if not number.is_integer():
                    raise ValueError(value)
                return int(number)
            if isinstance(default, float):
                return float(value)
            return str(value)
        except (TypeError, ValueError):
            raise ConfigError(
                f"config key '{key}' expects {type(default).__name__}, got {value!r}"
            ) from None


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)
