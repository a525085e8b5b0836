"""Building blocks shared by the curve (SME) and radiograph (LRS) generators.

Feature maps inside the generators are split into a local part, processed by
ordinary 3x3 convolutions, and a global part, processed in the frequency
domain by a :class:`SpectralTransform`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import functional as F
from .errors import ShapeError
from .nn import BatchNorm2d, Conv2d, ConvBnRelu, ConvTranspose2d, Linear, Module, Parameter
from .tensor import ComplexTensor, Tensor


@dataclass
class SplitFeature:
    """Local/global halves of a feature map with equal spatial size."""

    local: Tensor
    global_: Tensor

    def __post_init__(self) -> None:
        if self.local.ndim != 4 or self.global_.ndim != 4:
            raise ShapeError("split features must be [B,C,H,W]")
        if self.local.shape[0] != self.global_.shape[0] or self.local.shape[2:] != self.global_.shape[2:]:
            raise ShapeError(
                f"local {self.local.shape} and global {self.global_.shape} differ in batch or spatial size"
            )

    @property
    def channels(self) -> int:
        return self.local.shape[1] + self.global_.shape[1]

    def merged(self) -> Tensor:
        return F.concat([self.local, self.global_], axis=1)


def split_sizes(channels: int, global_ratio: float) -> Tuple[int, int]:
    """(local, global) channel counts for a total width and global ratio."""
    c_g = int(round(channels * global_ratio))
    c_g = min(max(c_g, 1), channels - 1)
    return channels - c_g, c_g


# ---------------------------------------------------------------------------
# Encoders
# ---------------------------------------------------------------------------


class ImageEncoder(Module):
    """Two stride-2 conv/BN/ReLU layers (H, W → H/4, W/4), then a channel split."""

    def __init__(self, in_channels: int, channels: int, global_ratio: float, rng: np.random.Generator):
        super().__init__()
        self.in_channels = in_channels
        self.conv1 = ConvBnRelu(in_channels, channels // 2, 3, rng, stride=2, padding=1)
        self.conv2 = ConvBnRelu(channels // 2, channels, 3, rng, stride=2, padding=1)
        self.c_local, self.c_global = split_sizes(channels, global_ratio)

    def forward(self, x: Tensor) -> SplitFeature:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"encoder expects [B,{self.in_channels},H,W], got {x.shape}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ShapeError(f"encoder input H={x.shape[2]}, W={x.shape[3]} must be divisible by 4")
        features = self.conv2(self.conv1(x))
        local, global_ = F.split_channels(features, [self.c_local, self.c_global])
        return SplitFeature(local, global_)


class LandmarkEncoder(Module):
    """Two fully connected layers applied to every landmark point (3 → d → d)."""

    def __init__(self, landmarks: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.landmarks = landmarks
        self.fc1 = Linear(3, dim, rng)
        self.fc2 = Linear(dim, dim, rng)

    def forward(self, points: Tensor) -> Tensor:
        if points.ndim != 3 or points.shape[1:] != (self.landmarks, 3):
            raise ShapeError(f"landmarks must be [B,{self.landmarks},3], got {points.shape}")
        return self.fc2(F.relu(self.fc1(points)))


# ---------------------------------------------------------------------------
# Frequency branch
# ---------------------------------------------------------------------------


def cross_attention(keys: Tensor, queries: Tensor, values: Tensor) -> Tuple[Tensor, Tensor]:
    """Scaled dot-product attention of frequency tokens over landmark tokens.

    Args:
        keys: [B,N,d] image frequency tokens
        queries: [B,L,d] landmark tokens
        values: [B,L,d] landmark value table

    Returns:
        ``(out [B,N,d], weights [B,N,L])``; each weight row sums to 1.
    """
    d = keys.shape[-1]
    scores = F.scale(F.matmul(keys, F.transpose(queries, (0, 2, 1))), 1.0 / math.sqrt(d))
    weights = F.softmax(scores, axis=-1)
    return F.matmul(weights, values), weights


class SpectralTransform(Module):
    """Global-branch operator: FFT → 1x1 conv (→ landmark cross-attention) → inverse FFT.

    Inputs whose spatial size is not a power of two are zero-padded before the
    transform and cropped afterwards. With ``attention`` off the landmark path
    is absent and the operator is a plain Fourier unit.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        dim: int,
        rng: np.random.Generator,
        attention: bool = True,
    ):
        super().__init__()
        self.dim = dim
        self.attention = attention
        self.out_channels = out_channels
        self.freq_in = Conv2d(2 * in_channels, 2 * dim if attention else dim, 1, rng)
        self.value = Linear(dim, dim, rng) if attention else None
        self.freq_out = Conv2d(dim, 2 * out_channels, 1, rng)
        self.spatial = Conv2d(in_channels, out_channels, 1, rng)
        self.out_conv = Conv2d(out_channels, out_channels, 1, rng)
        self.last_attention: Optional[np.ndarray] = None

    def forward(self, g: Tensor, tokens: Optional[Tensor] = None) -> Tensor:
        b, _, h, w = g.shape
        hp, wp = F.next_power_of_two(h), F.next_power_of_two(w)
        padded = F.pad2d(g, 0, hp - h, 0, wp - w) if (hp, wp) != (h, w) else g

        spectrum = F.fft2(padded)
        freq = F.relu(self.freq_in(F.concat([spectrum.real, spectrum.imag], axis=1)))

        if self.attention:
            if tokens is None:
                raise ShapeError("attention spectral transform needs landmark tokens")
            if tokens.shape[-1] != self.dim:
                raise ShapeError(f"landmark tokens have width {tokens.shape[-1]}, expected {self.dim}")
            keys_map, v_img_map = F.split_channels(freq, [self.dim, self.dim])
            keys = _to_tokens(keys_map)
            v_img = _to_tokens(v_img_map)
            attended, weights = cross_attention(keys, tokens, self.value(tokens))
            self.last_attention = weights.data
            fused = _from_tokens(F.add(attended, v_img), hp, wp)
        else:
            fused = freq

        back = self.freq_out(fused)
        re, im = F.split_channels(back, [self.out_channels, self.out_channels])
        spatial = F.ifft2_real(ComplexTensor(re, im))
        if (hp, wp) != (h, w):
            spatial = F.getitem(spatial, (slice(None), slice(None), slice(0, h), slice(0, w)))
        return self.out_conv(F.add(spatial, self.spatial(g)))


def _to_tokens(x: Tensor) -> Tensor:
    """[B,d,H,W] → [B,H*W,d]."""
    b, d, h, w = x.shape
    return F.transpose(F.reshape(x, (b, d, h * w)), (0, 2, 1))


def _from_tokens(x: Tensor, h: int, w: int) -> Tensor:
    """[B,H*W,d] → [B,d,H,W]."""
    b, _, d = x.shape
    return F.reshape(F.transpose(x, (0, 2, 1)), (b, d, h, w))


# ---------------------------------------------------------------------------
# FFC modules and residual blocks
# ---------------------------------------------------------------------------


class AttentionFFC(Module):
    """One FFC module whose global branch may attend to landmark tokens.

    local_out  = σ(l2l(local) + g2l(global))
    global_out = σ(l2g(local) + spectral(global, tokens))
    """

    def __init__(self, c_local: int, c_global: int, dim: int, rng: np.random.Generator, attention: bool = True):
        super().__init__()
        self.l2l = Conv2d(c_local, c_local, 3, rng, padding=1)
        self.g2l = Conv2d(c_global, c_local, 3, rng, padding=1)
        self.l2g = Conv2d(c_local, c_global, 3, rng, padding=1)
        self.spectral = SpectralTransform(c_global, c_global, dim, rng, attention=attention)
        self.bn_local = BatchNorm2d(c_local)
        self.bn_global = BatchNorm2d(c_global)

    def forward(self, x: SplitFeature, tokens: Optional[Tensor] = None) -> SplitFeature:
        local = F.relu(self.bn_local(F.add(self.l2l(x.local), self.g2l(x.global_))))
        global_ = F.relu(self.bn_global(F.add(self.l2g(x.local), self.spectral(x.global_, tokens))))
        return SplitFeature(local, global_)


class ResidualFFC(Module):
    """Two FFC modules plus a residual connection on each branch.

    Each branch carries a learnable output scale (initialised to 1); a zero
    scale makes the block the identity.
    """

    def __init__(self, c_local: int, c_global: int, dim: int, rng: np.random.Generator, attention: bool = True):
        super().__init__()
        self.ffc1 = AttentionFFC(c_local, c_global, dim, rng, attention=attention)
        self.ffc2 = AttentionFFC(c_local, c_global, dim, rng, attention=attention)
        self.scale_local = Parameter(np.ones(1))
        self.scale_global = Parameter(np.ones(1))

    def forward(self, x: SplitFeature, tokens: Optional[Tensor] = None) -> SplitFeature:
        y = self.ffc2(self.ffc1(x, tokens), tokens)
        return SplitFeature(
            F.add(x.local, F.mul(y.local, self.scale_local)),
            F.add(x.global_, F.mul(y.global_, self.scale_global)),
        )


# ---------------------------------------------------------------------------
# Spatial deformation network
# ---------------------------------------------------------------------------


class SpatialDeformation(Module):
    """Deformable conv whose output is warped by a learned affine sampling grid.

    Starts as a plain convolution: offsets are zero and the affine parameters
    are the identity.
    """

    IDENTITY = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])

    def __init__(self, channels: int, rng: np.random.Generator, loc_channels: int = 8, hidden: int = 16):
        super().__init__()
        self.offset_conv = Conv2d(channels, 18, 3, rng, padding=1).zero_()
        deform = Conv2d(channels, channels, 3, rng, padding=1)
        self.deform_weight = deform.weight
        self.deform_bias = deform.bias
        self.loc_conv = Conv2d(channels, loc_channels, 3, rng, padding=1)
        self.fc1 = Linear(loc_channels, hidden, rng)
        self.fc2 = Linear(hidden, 6, rng)
        self.fc2.weight.data[...] = 0.0
        self.fc2.bias.data[...] = self.IDENTITY
        self.last_theta: Optional[np.ndarray] = None

    def affine_params(self, x: Tensor) -> Tensor:
        """ζ as [B,2,3] from conv → global average pool → two FC layers."""
        pooled = F.mean(F.relu(self.loc_conv(x)), axis=(2, 3))
        zeta = self.fc2(F.relu(self.fc1(pooled)))
        return F.reshape(zeta, (x.shape[0], 2, 3))

    def deform(self, x: Tensor) -> Tensor:
        offsets = self.offset_conv(x)
        return F.deform_conv2d(x, self.deform_weight, offsets, self.deform_bias, padding=1)

    def forward(self, x: Tensor, theta: Optional[Tensor] = None) -> Tensor:
        features = self.deform(x)
        theta = self.affine_params(x) if theta is None else theta
        self.last_theta = theta.data
        grid = F.affine_grid(theta, x.shape[2], x.shape[3])
        return F.grid_sample(features, grid)


# ---------------------------------------------------------------------------
# Decoder and discriminator
# ---------------------------------------------------------------------------


class Decoder(Module):
    """Two stride-2 transposed convs back to full resolution, sigmoid output."""

    def __init__(self, channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.up1 = ConvTranspose2d(channels, channels // 2, 4, rng, stride=2, padding=1)
        self.bn = BatchNorm2d(channels // 2)
        self.up2 = ConvTranspose2d(channels // 2, out_channels, 4, rng, stride=2, padding=1)
        self.up2.bias.data[...] = 0.0

    def logits(self, x: Tensor) -> Tensor:
        return self.up2(F.relu(self.bn(self.up1(x))))

    def forward(self, x: Tensor) -> Tensor:
        return F.sigmoid(self.logits(x))


class PatchDiscriminator(Module):
    """Conditional PatchGAN: input stack and candidate image in, patch logits out."""

    def __init__(self, in_channels: int, rng: np.random.Generator, base: int = 64):
        super().__init__()
        widths = [base, base * 2, base * 4]
        self.convs: List[Conv2d] = []
        prev = in_channels
        for width in widths:
            self.convs.append(Conv2d(prev, width, 4, rng, stride=2, padding=1))
            prev = width
        self.head = Conv2d(prev, 1, 4, rng, stride=1, padding=1)
        self.in_channels = in_channels

    def forward(self, condition: Tensor, candidate: Tensor) -> Tensor:
        x = F.concat([condition, candidate], axis=1)
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"discriminator expects {self.in_channels} channels, got {x.shape[1]}")
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        return self.head(x)
