"""Landmark heatmap network on lateral radiographs and its pretraining loop.

The network sees the radiograph plus two coordinate channels, downsamples by
four with two strided convolutions and predicts one heatmap per lateral point
(C7, six level samples, ToC). Its penultimate activations are the feature
space of the spine-landmark loss.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from .dataset import PreparedSample, batch_indices
from .errors import ConfigError, ShapeError
from .losses import mse_loss
from .nn import Conv2d, Module
from .optim import Adam, update_lr
from .phantom import LATERAL_POINT_NAMES
from .tensor import Tensor, as_tensor, no_grad

logger = logging.getLogger(__name__)

STRIDE = 4
POINT_COUNT = len(LATERAL_POINT_NAMES)


def coordinate_grid(height: int, width: int) -> np.ndarray:
    """[2,H,W] row and column coordinates scaled to [-1, 1]."""
    rows = np.linspace(-1.0, 1.0, height) if height > 1 else np.zeros(1)
    cols = np.linspace(-1.0, 1.0, width) if width > 1 else np.zeros(1)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr, cc])


class SlsNet(Module):
    """conv(s2) → conv(s2) → 1x1 head, with a freeze switch."""

    def __init__(self, rng: np.random.Generator, channels: Tuple[int, int] = (16, 32), points: int = POINT_COUNT):
        super().__init__()
        c1, c2 = channels
        self.conv1 = Conv2d(3, c1, 3, rng, stride=2, padding=1)
        self.conv2 = Conv2d(c1, c2, 3, rng, stride=2, padding=1)
        self.head = Conv2d(c2, points, 1, rng)
        self.frozen = False

    def freeze(self) -> "SlsNet":
        """Stop tracking parameter gradients; gradients still reach the input."""
        for p in self.parameters():
            p.requires_grad = False
            p.zero_grad()
        self.frozen = True
        return self.eval()

    def _with_coordinates(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"SlsNet expects radiographs [B,1,H,W], got {x.shape}")
        if x.shape[2] % STRIDE or x.shape[3] % STRIDE:
            raise ShapeError(f"radiograph size {x.shape[2]}x{x.shape[3]} is not divisible by {STRIDE}")
        grid = np.broadcast_to(coordinate_grid(x.shape[2], x.shape[3]), (x.shape[0], 2) + x.shape[2:])
        return F.concat([x, Tensor(np.array(grid))], axis=1)

    def features(self, x: Tensor) -> Tensor:
        """Penultimate activations [B,C2,H/4,W/4]."""
        x = self._with_coordinates(as_tensor(x))
        return F.relu(self.conv2(F.relu(self.conv1(x))))

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.features(x))

    def locate(self, radiographs: np.ndarray) -> np.ndarray:
        """(row, col) of every point on full-resolution images, [B,P,2]."""
        with no_grad():
            heatmaps = self(Tensor(radiographs)).data
        return decode_heatmaps(heatmaps) * STRIDE


def heatmap_targets(points: np.ndarray, height: int, width: int, sigma: float = 1.0) -> np.ndarray:
    """Gaussian targets [B,P,H/4,W/4] centred on ``points / 4``."""
    points = np.asarray(points, dtype=np.float64)
    h, w = height // STRIDE, width // STRIDE
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    centres = points / STRIDE
    dr = rr[None, None] - centres[..., 0, None, None]
    dc = cc[None, None] - centres[..., 1, None, None]
    return np.exp(-(dr**2 + dc**2) / (2.0 * sigma**2))


def decode_heatmaps(heatmaps: np.ndarray) -> np.ndarray:
    """Sub-pixel peak per map: argmax refined by the centroid of its 3x3 window."""
    b, p, h, w = heatmaps.shape
    out = np.zeros((b, p, 2))
    for i in range(b):
        for j in range(p):
            hm = heatmaps[i, j]
            r, c = np.unravel_index(int(np.argmax(hm)), hm.shape)
            r0, r1 = max(r - 1, 0), min(r + 2, h)
            c0, c1 = max(c - 1, 0), min(c + 2, w)
            window = np.clip(hm[r0:r1, c0:c1] - hm[r0:r1, c0:c1].min(), 0.0, None)
            total = window.sum()
            if total <= 0:
                out[i, j] = (r, c)
                continue
            wr, wc = np.mgrid[r0:r1, c0:c1]
            out[i, j] = ((window * wr).sum() / total, (window * wc).sum() / total)
    return out


def parameter_checksum(module: Module) -> str:
    """SHA-256 over every parameter and buffer, in state-dict order."""
    digest = hashlib.sha256()
    for name, array in module.state_dict().items():
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlsTrainSettings:
    max_epochs: int = 40
    batch_size: int = 8
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    threshold: float = 0.002
    sigma: float = 1.0
    seed: int = 7

    def __post_init__(self) -> None:
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


def _heatmap_batch(samples: Sequence[PreparedSample], sigma: float) -> Tuple[np.ndarray, np.ndarray]:
    images = np.stack([s.radiograph for s in samples])
    targets = heatmap_targets(np.stack([s.points for s in samples]), images.shape[2], images.shape[3], sigma)
    return images, targets


def heatmap_mse(net: SlsNet, samples: Sequence[PreparedSample], sigma: float = 1.0) -> float:
    images, targets = _heatmap_batch(samples, sigma)
    with no_grad():
        return float(np.mean((net(Tensor(images)).data - targets) ** 2))


def pretrain_sls(
    train: Sequence[PreparedSample],
    val: Sequence[PreparedSample],
    settings: SlsTrainSettings = SlsTrainSettings(),
    net: Optional[SlsNet] = None,
) -> Tuple[SlsNet, List[Dict[str, float]]]:
    """Fit heatmaps until validation MSE drops below ``settings.threshold``.

    Returns:
        The frozen network and one history row per epoch.
    """
    if not train:
        raise ConfigError("pretraining needs at least one training sample")
    rng = np.random.default_rng(settings.seed)
    net = net or SlsNet(rng)
    net.train()
    optimizer = Adam(net.parameters())
    steps_per_epoch = len(batch_indices(len(train), settings.batch_size))
    total_steps = settings.max_epochs * steps_per_epoch
    step = 0
    history: List[Dict[str, float]] = []
    val = val or train

    for epoch in range(1, settings.max_epochs + 1):
        losses = []
        for idx in batch_indices(len(train), settings.batch_size, rng):
            images, targets = _heatmap_batch([train[i] for i in idx], settings.sigma)
            lr = update_lr(step, total_steps, settings.lr_max, settings.lr_min)
            optimizer.zero_grad()
            loss = mse_loss(net(Tensor(images)), targets)
            loss.backward()
            optimizer.step(lr)
            losses.append(loss.item())
            step += 1
        val_mse = heatmap_mse(net, val, settings.sigma)
        history.append({"epoch": epoch, "lr": lr, "train_mse": float(np.mean(losses)), "val_mse": val_mse})
        logger.info(f"SLS epoch {epoch}: train MSE {np.mean(losses):.5f}, val MSE {val_mse:.5f}")
        if val_mse < settings.threshold:
            logger.info(f"SLS validation MSE below {settings.threshold}; stopping after epoch {epoch}")
            break
    else:
        logger.warning(f"SLS validation MSE still {val_mse:.5f} after {settings.max_epochs} epochs")

    return net.freeze(), history
