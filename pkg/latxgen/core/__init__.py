"""Core package initialization."""
from .errors import (
    LatXGenError,
    ShapeError,
    SpectralSizeError,
    GeometryError,
    PhantomError,
    MeasurementError,
    ConfigError,
    PrerequisiteError,
    CheckpointError,
)
from .tensor import Tensor, ComplexTensor, Function, no_grad
from .nn import Module, Parameter
from .optim import Adam, adam_step, cosine_lr, update_lr
from .checkpoint import encode_checkpoint, decode_checkpoint, save_checkpoint, load_checkpoint
from .geometry import (
    CameraIntrinsics,
    LandmarkSet3D,
    RGBDFrame,
    RotationSpec,
    depth_to_points,
    reproject,
    transform_frame,
)
from .phantom import PhantomSpec, RenderSettings, SpineModel3D, build_spine, generate_corpus
from .dataset import Corpus, PreparedSample, load_frame, save_frame
from .sme import SmeConfig, SmeGenerator, SmeDiscriminator, discriminator_s
from .lrs import LrsConfig, LrsGenerator, LrsDiscriminator, discriminator_l, lrs_forward
from .losses import LossWeights, adv_losses_s, adv_losses_l, l1_loss, sls_loss, total_losses
from .augment import AugmentConfig, augment
from .sls import SlsNet, pretrain_sls
from .trainer import TrainConfig, StageResult, train_stage, pretrain_sls_stage, load_sme, load_lrs, load_sls
from .evaluation import (
    SegScores,
    SagittalAngles,
    seg_scores,
    psnr,
    measure_sagittal_angles,
    angles_from_radiograph,
    regression_stats,
    confusion,
    classify_angles,
)
from .ablation import ablate_rotation, ablate_sls, ablate_sdn
from .manifest import RunManifest

__all__ = [
    "LatXGenError",
    "ShapeError",
    "SpectralSizeError",
    "GeometryError",
    "PhantomError",
    "MeasurementError",
    "ConfigError",
    "PrerequisiteError",
    "CheckpointError",
    "Tensor",
    "ComplexTensor",
    "Function",
    "no_grad",
    "Module",
    "Parameter",
    "Adam",
    "adam_step",
    "cosine_lr",
    "update_lr",
    "encode_checkpoint",
    "decode_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "CameraIntrinsics",
    "LandmarkSet3D",
    "RGBDFrame",
    "RotationSpec",
    "depth_to_points",
    "reproject",
    "transform_frame",
    "PhantomSpec",
    "RenderSettings",
    "SpineModel3D",
    "build_spine",
    "generate_corpus",
    "Corpus",
    "PreparedSample",
    "load_frame",
    "save_frame",
    "SmeConfig",
    "SmeGenerator",
    "SmeDiscriminator",
    "discriminator_s",
    "LrsConfig",
    "LrsGenerator",
    "LrsDiscriminator",
    "discriminator_l",
    "lrs_forward",
    "LossWeights",
    "adv_losses_s",
    "adv_losses_l",
    "l1_loss",
    "sls_loss",
    "total_losses",
    "AugmentConfig",
    "augment",
    "SlsNet",
    "pretrain_sls",
    "TrainConfig",
    "StageResult",
    "train_stage",
    "pretrain_sls_stage",
    "load_sme",
    "load_lrs",
    "load_sls",
    "SegScores",
    "SagittalAngles",
    "seg_scores",
    "psnr",
    "measure_sagittal_angles",
    "angles_from_radiograph",
    "regression_stats",
    "confusion",
    "classify_angles",
    "ablate_rotation",
    "ablate_sls",
    "ablate_sdn",
    "RunManifest",
]
