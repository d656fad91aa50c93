"""Neural haze rendering: learned transmission maps plus exemplar airlight transfer."""

from .evaluation import BaselineConfig, SetStatistics, baseline_render, fid, psnr
from .imaging import (
    apply_density,
    load_image,
    render_haze,
    save_image,
    to_grayscale,
    transmission_from_depth,
)
from .losses import FeatureTaps, LossWeights, SsimConfig
from .networks import AirlightNet, FeatureBackbone, PatchDiscriminator, TransmissionNet
from .training import TrainConfig, fit, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "AirlightNet",
    "BaselineConfig",
    "FeatureBackbone",
    "FeatureTaps",
    "LossWeights",
    "PatchDiscriminator",
    "SetStatistics",
    "SsimConfig",
    "TrainConfig",
    "TransmissionNet",
    "apply_density",
    "baseline_render",
    "fid",
    "fit",
    "load_checkpoint",
    "load_image",
    "psnr",
    "render_haze",
    "save_checkpoint",
    "save_image",
    "to_grayscale",
    "transmission_from_depth",
    "__version__",
]
