"""Adversarial, pixel and landmark-feature losses for both stages."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

from . import functional as F
from .errors import ConfigError, PrerequisiteError, ShapeError
from .tensor import Tensor, as_tensor


@dataclass(frozen=True)
class LossWeights:
    """alpha weights L1 in the SME loss; beta and gamma weight L1 and SLS in the LRS loss."""

    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 3.0

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")


def discriminator_loss(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    """BCE pushing real patches to 1 and fake patches to 0 (sum of both terms)."""
    return F.add(F.bce_with_logits(real_logits, 1.0), F.bce_with_logits(fake_logits, 0.0))


def generator_loss(fake_logits: Tensor) -> Tensor:
    """Non-saturating generator loss: -E[log D(G(x))]."""
    return F.bce_with_logits(fake_logits, 1.0)


def adv_losses_s(real_logits: Tensor, fake_logits: Tensor) -> Tuple[Tensor, Tensor]:
    """(L_D, L_G) for the curve stage."""
    return discriminator_loss(real_logits, fake_logits), generator_loss(fake_logits)


def adv_losses_l(real_logits: Tensor, fake_logits: Tensor) -> Tuple[Tensor, Tensor]:
    """(L_D, L_G) for the radiograph stage."""
    return discriminator_loss(real_logits, fake_logits), generator_loss(fake_logits)


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error over batch and pixels."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    return F.mean(F.abs(F.sub(pred, target)))


def mse_loss(pred: Tensor, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    return F.mean(F.square(F.sub(pred, target)))


def sls_loss(pred_xray: Tensor, gt_xray, sls) -> Tensor:
    """Mean squared difference of the frozen landmark network's penultimate features.

    Raises:
        PrerequisiteError: if the landmark network is not frozen.
    """
    if not sls.frozen:
        raise PrerequisiteError("SLS loss needs a frozen landmark network; call freeze() after pretraining")
    target = sls.features(as_tensor(gt_xray)).data
    return mse_loss(sls.features(as_tensor(pred_xray)), target)


def total_losses(
    g_s: Tensor,
    l1_s: Tensor,
    g_l: Tensor,
    l1_l: Tensor,
    sls: Tensor,
    weights: LossWeights = LossWeights(),
) -> Tuple[Tensor, Tensor]:
    """(L_SME, L_LRS) = (G_S + alpha*L1_S, G_L + beta*L1_L + gamma*SLS)."""
    return sme_objective(g_s, l1_s, weights), lrs_objective(g_l, l1_l, sls, weights)


def sme_objective(g_s: Tensor, l1_s: Tensor, weights: LossWeights) -> Tensor:
    return F.add(g_s, F.scale(l1_s, weights.alpha))


def lrs_objective(g_l: Tensor, l1_l: Tensor, sls: Tensor, weights: LossWeights) -> Tensor:
    return F.add(F.add(g_l, F.scale(l1_l, weights.beta)), F.scale(sls, weights.gamma))
