"""Spine morphology estimation: rotated RGB-D + landmarks → lateral curve map."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .blocks import (
    Decoder,
    ImageEncoder,
    LandmarkEncoder,
    PatchDiscriminator,
    ResidualFFC,
    SpatialDeformation,
    SplitFeature,
    split_sizes,
)
from .errors import ConfigError, ShapeError
from .geometry import LANDMARK_COUNT
from .nn import Module
from .tensor import Tensor, as_tensor


@dataclass(frozen=True)
class SmeConfig:
    """Widths and switches of the curve generator."""

    blocks: int = 6
    channels: int = 64
    global_ratio: float = 0.5
    attn_dim: int = 32
    landmarks: int = LANDMARK_COUNT
    in_channels: int = 5
    out_channels: int = 1
    use_sdn: bool = True
    use_attention: bool = True
    disc_channels: int = 64

    def __post_init__(self) -> None:
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if not 0.0 < self.global_ratio < 1.0:
            raise ConfigError(f"global_ratio must lie in (0, 1), got {self.global_ratio}")
        if self.channels < 4 or self.channels % 2:
            raise ConfigError(f"channels must be an even number >= 4, got {self.channels}")
        if self.attn_dim < 1:
            raise ConfigError(f"attn_dim must be >= 1, got {self.attn_dim}")


class SmeGenerator(Module):
    """Encoders → stacked residual attention-FFC blocks → SDN → decoder."""

    def __init__(self, config: SmeConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        c_local, c_global = split_sizes(config.channels, config.global_ratio)
        self.image_encoder = ImageEncoder(config.in_channels, config.channels, config.global_ratio, rng)
        self.landmark_encoder = LandmarkEncoder(config.landmarks, config.attn_dim, rng)
        self.blocks: List[ResidualFFC] = [
            ResidualFFC(c_local, c_global, config.attn_dim, rng, attention=config.use_attention)
            for _ in range(config.blocks)
        ]
        self.sdn = SpatialDeformation(config.channels, rng) if config.use_sdn else None
        self.decoder = Decoder(config.channels, config.out_channels, rng)

    def encode_image(self, image: Tensor) -> SplitFeature:
        return self.image_encoder(as_tensor(image))

    def encode_landmarks(self, landmarks: Tensor) -> Tensor:
        return self.landmark_encoder(as_tensor(landmarks))

    def features(self, image: Tensor, landmarks: Tensor) -> SplitFeature:
        x = self.encode_image(image)
        tokens = self.encode_landmarks(landmarks) if self.config.use_attention else None
        if tokens is not None and tokens.shape[0] != x.local.shape[0]:
            raise ShapeError("image and landmark batches differ in size")
        for block in self.blocks:
            x = block(x, tokens)
        return x

    def sdn_forward(self, x: SplitFeature) -> Tensor:
        merged = x.merged()
        return self.sdn(merged) if self.sdn is not None else merged

    def decode_curve(self, features: Tensor) -> Tensor:
        return self.decoder(features)

    def forward(self, image: Tensor, landmarks: Tensor) -> Tensor:
        """Curve map [B,1,H,W] in [0,1]."""
        return self.decode_curve(self.sdn_forward(self.features(image, landmarks)))


class SmeDiscriminator(PatchDiscriminator):
    """PatchGAN over (rotated input stack, curve map) pairs."""

    def __init__(self, config: SmeConfig, rng: np.random.Generator):
        super().__init__(config.in_channels + config.out_channels, rng, base=config.disc_channels)


def discriminator_s(disc: SmeDiscriminator, image: Tensor, curve: Tensor) -> Tensor:
    return disc(as_tensor(image), as_tensor(curve))
