"""Lateral radiograph synthesis: rotated RGB-D + curve map → radiograph."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .blocks import Decoder, ImageEncoder, PatchDiscriminator, ResidualFFC, split_sizes
from .errors import ConfigError, ShapeError
from .nn import Module
from .tensor import Tensor, as_tensor


@dataclass(frozen=True)
class LrsConfig:
    blocks: int = 6
    channels: int = 64
    global_ratio: float = 0.5
    spectral_dim: int = 32
    in_channels: int = 6
    out_channels: int = 1
    disc_channels: int = 64

    def __post_init__(self) -> None:
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if not 0.0 < self.global_ratio < 1.0:
            raise ConfigError(f"global_ratio must lie in (0, 1), got {self.global_ratio}")
        if self.channels < 4 or self.channels % 2:
            raise ConfigError(f"channels must be an even number >= 4, got {self.channels}")


class LrsGenerator(Module):
    """Encoder → plain FFC residual blocks → decoder.

    Input channels: rotated rgb (3), normalised depth (1), validity mask (1)
    and the curve map (1).
    """

    def __init__(self, config: LrsConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        c_local, c_global = split_sizes(config.channels, config.global_ratio)
        self.encoder = ImageEncoder(config.in_channels, config.channels, config.global_ratio, rng)
        self.blocks: List[ResidualFFC] = [
            ResidualFFC(c_local, c_global, config.spectral_dim, rng, attention=False)
            for _ in range(config.blocks)
        ]
        self.decoder = Decoder(config.channels, config.out_channels, rng)

    def forward(self, stacked: Tensor) -> Tensor:
        """Radiograph [B,1,H,W] in [0,1].

        Raises:
            ShapeError: if the input does not have ``in_channels`` channels.
        """
        stacked = as_tensor(stacked)
        if stacked.ndim != 4 or stacked.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"LRS input must have {self.config.in_channels} channels "
                f"(rgb, depth, mask, curve), got shape {stacked.shape}"
            )
        x = self.encoder(stacked)
        for block in self.blocks:
            x = block(x)
        return self.decoder(x.merged())


def lrs_forward(model: LrsGenerator, stacked: Tensor) -> Tensor:
    return model(stacked)


class LrsDiscriminator(PatchDiscriminator):
    """PatchGAN over (input stack, radiograph) pairs."""

    def __init__(self, config: LrsConfig, rng: np.random.Generator):
        super().__init__(config.in_channels + config.out_channels, rng, base=config.disc_channels)


def discriminator_l(disc: LrsDiscriminator, stacked: Tensor, radiograph: Tensor) -> Tensor:
    return disc(as_tensor(stacked), as_tensor(radiograph))
