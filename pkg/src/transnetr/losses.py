"""Binary cross-entropy plus soft Dice segmentation objective."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

PRED_CLAMP = 1e-7


def bce_dice_loss(
    pred: Tensor,
    target: Tensor,
    bce_weight: float = 1.0,
    dice_weight: float = 1.0,
    smooth: float = 1.0,
    clamp: float = PRED_CLAMP,
) -> Tensor:
    """``bce_weight * BCE + dice_weight * Dice`` for N×1×H×W probabilities.

    BCE is the mean over all pixels, computed on predictions clamped to
    ``[clamp, 1 - clamp]``. The Dice term is the batch mean of
    ``1 - (2·Σpt + s) / (Σp + Σt + s)`` per image.
    """
    if pred.shape != target.shape:
        raise ValueError(f"bce_dice_loss shape mismatch: pred {pred.shape} vs target {target.shape}")
    t = target.data
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("bce_dice_loss target must be binary (values in {0, 1})")
    return bce_weight * bce_loss(pred, target, clamp) + dice_weight * dice_loss(pred, target, smooth)


def bce_loss(pred: Tensor, target: Tensor, clamp: float = PRED_CLAMP) -> Tensor:
    p = pred.clip(clamp, 1.0 - clamp)
    t = Tensor(target.data.astype(pred.dtype))
    ll = t * p.log() + (1.0 - t) * (1.0 - p).log()
    return -ll.mean()


def dice_loss(pred: Tensor, target: Tensor, smooth: float = 1.0) -> Tensor:
    t = Tensor(target.data.astype(pred.dtype))
    axes = tuple(range(1, pred.ndim))
    inter = (pred * t).sum(axis=axes)
    denom = pred.sum(axis=axes) + t.sum(axis=axes)
    per_image = 1.0 - (2.0 * inter + smooth) / (denom + smooth)
    return per_image.mean()
