"""Deterministic dataset fingerprinting and architecture planning.

A small, fixed rule set maps a dataset fingerprint (dimensions, channels,
classes, intensity statistics) to a network and optimizer plan. The rules
are deliberately simple and fully reproducible: the same fingerprint yields
the same plan on every run and platform.
"""

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import EmptyDataset, ImageTooSmall, InconsistentShapes, PlanInvalid

STD_CLAMP = 1e-8
MAX_STAGES = 6
BASE_FEATURES = 32
FEATURE_CAP = 512
MIN_BOTTLENECK = 4


@dataclass
class Fingerprint:
    height: int
    width: int
    channels: int
    classes: int
    intensity_mean: tuple
    intensity_std: tuple
    spacing: tuple
    sample_count: int

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("intensity_mean", "intensity_std", "spacing"):
            d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class PlanConfig:
    num_stages: int
    features_per_stage: tuple
    kernel_size: int
    batch_size: int
    learning_rate: float
    lr_power: float
    max_epochs: int
    normalization: str = "zscore"
    augmentation: dict = field(default_factory=lambda: {
        "rotate_deg": 25.0,
        "scale_range": (0.85, 1.15),
        "elastic": {"alpha": 10.0, "sigma": 8.0},
    })
    concat_stage: int = 1  # deepest decoder stage receives the frozen embedding

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["features_per_stage"] = tuple(d["features_per_stage"])
        aug = dict(d["augmentation"])
        aug["scale_range"] = tuple(aug["scale_range"])
        aug["elastic"] = dict(aug["elastic"])
        d["augmentation"] = aug
        return cls(**d)


def fingerprint(samples, classes):
    """Summarize a training split: dims, exact per-channel intensity stats.

    All samples must share the same image shape. Stats are accumulated in
    float64 over every training pixel; std is clamped at 1e-8 so constant
    channels stay usable for z-scoring.
    """
    samples = list(samples)
    if not samples:
        raise EmptyDataset("cannot fingerprint an empty dataset")
    shape = samples[0].image.shape
    spacing = tuple(samples[0].spacing)
    n_ch = shape[2]
    total = np.zeros(n_ch, dtype=np.float64)
    total_sq = np.zeros(n_ch, dtype=np.float64)
    count = 0
    for s in samples:
        if s.image.shape != shape:
            raise InconsistentShapes(f"{s.image.shape} vs {shape}")
        img = s.image.astype(np.float64)
        total += img.sum(axis=(0, 1))
        total_sq += (img * img).sum(axis=(0, 1))
        count += shape[0] * shape[1]
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), STD_CLAMP)
    return Fingerprint(
        height=int(shape[0]),
        width=int(shape[1]),
        channels=int(n_ch),
        classes=int(classes),
        intensity_mean=tuple(float(m) for m in mean),
        intensity_std=tuple(float(s) for s in std),
        spacing=spacing,
        sample_count=len(samples),
    )


def plan(fp, max_epochs=200):
    """Derive the architecture and optimizer plan for a fingerprint.

    Stage count scales with image size, capped so the bottleneck stays at
    least 4 px; feature widths double per stage up to a cap. The image dims
    must be divisible by 2**stages so skip connections line up exactly.
    """
    h, w = fp.height, fp.width
    if min(h, w) < 32:
        raise ImageTooSmall(f"min image dim {min(h, w)} < 32")
    t = min(MAX_STAGES, int(math.floor(math.log2(min(h, w)))) - 2)
    if h % (1 << t) or w % (1 << t):
        raise PlanInvalid(
            f"image dims {h}x{w} must be divisible by 2**{t} for {t} downsamplings"
        )
    features = tuple(min(BASE_FEATURES * (1 << i), FEATURE_CAP) for i in range(t + 1))
    batch = int(math.floor(min(max(4096.0 * 1024.0 / (h * w), 2.0), 12.0)))
    return PlanConfig(
        num_stages=t,
        features_per_stage=features,
        kernel_size=3,
        batch_size=batch,
        learning_rate=0.01,
        lr_power=0.9,
        max_epochs=max_epochs,
    )


def poly_lr(plan_cfg, epoch):
    """Polynomially decayed learning rate for a 0-based epoch index."""
    frac = 1.0 - epoch / max(plan_cfg.max_epochs, 1)
    return plan_cfg.learning_rate * max(frac, 0.0) ** plan_cfg.lr_power
