"""Few-shot medical-style image segmentation with level-set shape priors.

An auto-configured encoder-decoder network, an optional frozen plug-in
feature encoder fused at the bottleneck, and a curvature-supervised
regression head, together with the metrics and experiment harness to
exercise them.
"""

__version__ = "0.1.0"

from ._kernels import numba_enabled
from .autoconfig import Fingerprint, PlanConfig, fingerprint, plan
from .levelset import (BinaryMask, CurvatureMap, LevelSetMap, SharpenedField,
                       curvature, sharpen, signed_distance,
                       spatial_derivatives)
from .losses import (LossWeights, ce_loss, curvature_loss, dice_loss,
                     levelset_mse, seg_loss, total_loss)
from .metrics import LabelMask, MetricReport, aggregate, asd, dice_coefficient
from .model import DualEncoderUNet, FrozenEncoderSpec, build_model
from .trainer import RunConfig, ablate, evaluate, predict, train

__all__ = [
    "BinaryMask", "CurvatureMap", "DualEncoderUNet", "Fingerprint",
    "FrozenEncoderSpec", "LabelMask", "LevelSetMap", "LossWeights",
    "MetricReport", "PlanConfig", "RunConfig", "SharpenedField",
    "aggregate", "asd", "ablate", "build_model", "ce_loss", "curvature",
    "curvature_loss", "dice_coefficient", "dice_loss", "evaluate",
    "fingerprint", "levelset_mse", "numba_enabled", "plan", "predict",
    "seg_loss", "sharpen", "signed_distance", "spatial_derivatives",
    "total_loss", "train",
]
