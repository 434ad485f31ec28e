"""Training losses: overlap, cross-entropy, level-set MSE, curvature.

All functions take channels-first tensors, either (C, H, W) or batched
(B, C, H, W); a batch is treated as extra pixels (global sums / means). They
are pure, thread-safe, and differentiable, so gradients can be verified
against finite differences. Training runs them in float32; verification
tests use float64.

The curvature chain mirrors the numpy implementation in ``levelset`` exactly
(same clamped sigmoid, same replicate-padded central differences), but is
built from torch primitives so gradients flow into the predicted field. The
ground-truth branch is always treated as a constant.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ShapeMismatch

DICE_EPS = 1e-6
CE_CLAMP = 1e-12
SHARPEN_GAIN = 1000.0
EXP_CLAMP = 500.0


@dataclass
class LossWeights:
    """Weights of the segmentation, level-set and curvature terms."""

    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 0.0001

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda3 < 0:
            raise ValueError("loss weights must be nonnegative")


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() not in (3, 4):
        raise ShapeMismatch("expected (C, H, W) or (B, C, H, W) tensors")


def dice_loss(p, y):
    """1 - 2*sum(p*y) / (sum(p + y) + eps), summed over all pixels and classes."""
    _check_shapes(p, y)
    num = 2.0 * (p * y).sum()
    den = (p + y).sum() + DICE_EPS
    return 1.0 - num / den


def ce_loss(p, y):
    """Mean over pixels and classes of -y * log(p), with p clamped at 1e-12."""
    _check_shapes(p, y)
    return -(y * torch.log(p.clamp(min=CE_CLAMP))).mean()


def seg_loss(p, y):
    """Segmentation loss: overlap term plus cross-entropy term."""
    return dice_loss(p, y) + ce_loss(p, y)


def _masked_mean(x, channel_weights):
    # channel_weights: (B, C) or (C,) of {0,1}-ish weights; None means all-on,
    # which reduces to a plain mean over every element.
    if channel_weights is None:
        return x.mean()
    w = channel_weights.to(x.dtype)
    wsum = w.sum()
    if wsum == 0:
        return x.sum() * 0.0
    per_px = x.shape[-1] * x.shape[-2]
    return (x * w[..., None, None]).sum() / (per_px * wsum)


def levelset_mse(phi_pred, phi_gt, channel_weights=None):
    """Mean squared error between predicted and target level-set stacks."""
    _check_shapes(phi_pred, phi_gt)
    return _masked_mean((phi_pred - phi_gt) ** 2, channel_weights)


def sharpen_field(phi):
    """Clamped sigmoid sharpening, identical to the numpy-side definition.

    sigmoid(-x) == 1 / (1 + exp(x)); torch.sigmoid is used because its
    backward never materializes exp(x), which is inf in float32 at the
    clamp limit and would poison the gradient with 0 * inf.
    """
    return torch.sigmoid(-torch.clamp(SHARPEN_GAIN * phi, -EXP_CLAMP, EXP_CLAMP))


def curvature_field(phi):
    """Elementwise curvature of sharpen_field(phi); differentiable in phi."""
    f = sharpen_field(phi)
    squeeze = f.dim() == 3
    if squeeze:
        f = f.unsqueeze(0)
    p = F.pad(f, (1, 1, 1, 1), mode="replicate")
    d_a = (p[..., 2:, 1:-1] - p[..., :-2, 1:-1]) / 2.0
    d_b = (p[..., 1:-1, 2:] - p[..., 1:-1, :-2]) / 2.0
    d_aa = p[..., 2:, 1:-1] - 2.0 * f + p[..., :-2, 1:-1]
    d_bb = p[..., 1:-1, 2:] - 2.0 * f + p[..., 1:-1, :-2]
    pa = F.pad(d_a, (1, 1, 0, 0), mode="replicate")
    d_ab = (pa[..., 2:] - pa[..., :-2]) / 2.0
    num = torch.abs((1.0 + d_a**2) * d_bb + (1.0 + d_b**2) * d_aa
                    - 2.0 * d_a * d_b * d_ab)
    den = 2.0 * (1.0 + d_a**2 + d_b**2) ** 1.5
    k = num / den
    return k.squeeze(0) if squeeze else k


def curvature_loss(phi_pred, phi_gt, channel_weights=None):
    """Mean absolute difference between the two curvature fields.

    Gradient flows only into phi_pred; the target branch is detached.
    """
    _check_shapes(phi_pred, phi_gt)
    k_pred = curvature_field(phi_pred)
    with torch.no_grad():
        k_gt = curvature_field(phi_gt.detach())
    return _masked_mean(torch.abs(k_pred - k_gt), channel_weights)


def total_loss(p, y, phi_pred, phi_gt, weights=None, channel_weights=None):
    """Weighted sum of the three terms, returned with its breakdown.

    When phi_pred is None (model trained without the regression head) the
    level-set and curvature terms are zero. Returns a dict of 0-dim tensors
    {"total", "s", "l", "c"}; "total" carries the autograd graph.
    """
    if weights is None:
        weights = LossWeights()
    s = seg_loss(p, y)
    if phi_pred is None:
        l = torch.zeros((), dtype=s.dtype, device=s.device)
        c = torch.zeros((), dtype=s.dtype, device=s.device)
    else:
        l = levelset_mse(phi_pred, phi_gt, channel_weights)
        c = curvature_loss(phi_pred, phi_gt, channel_weights)
    total = weights.lambda1 * s + weights.lambda2 * l + weights.lambda3 * c
    return {"total": total, "s": s, "l": l, "c": c}
