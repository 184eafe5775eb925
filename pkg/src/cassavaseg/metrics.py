"""Segmentation overlap metrics and regression statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateInput, ShapeError
from .imgmask import NECROSIS, ROOT, LabelMask
from .nn.tensor import Tensor

DICE_SMOOTH = 1e-6
FOREGROUND_CLASSES = (ROOT, NECROSIS)


@dataclass(frozen=True)
class OverlapStats:
    r_pred: float
    r_inp: float
    intersection: float
    union: float


@dataclass(frozen=True)
class RegressionStats:
    mse: float
    r2: float
    r: float


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pred, LabelMask) or isinstance(truth, LabelMask):
        raise TypeError("pass per-class regions (e.g. mask.classes == 2), not LabelMask")
    p, t = np.asarray(pred), np.asarray(truth)
    if p.shape != t.shape:
        raise ShapeError(f"region shapes differ: {p.shape} vs {t.shape}")
    return p, t


def overlap(pred, truth) -> OverlapStats:
    """Areas of two regions. Boolean inputs count pixels; float inputs are soft sums."""
    p, t = _pair(pred, truth)
    if p.dtype == bool and t.dtype == bool:
        inter = int(np.count_nonzero(p & t))
        rp, rt = int(np.count_nonzero(p)), int(np.count_nonzero(t))
        return OverlapStats(rp, rt, inter, rp + rt - inter)
    p = p.astype(np.float64)
    t = t.astype(np.float64)
    inter = float((p * t).sum())
    rp, rt = float(p.sum()), float(t.sum())
    return OverlapStats(rp, rt, inter, rp + rt - inter)


def dice_coefficient(pred, truth, smooth: float = DICE_SMOOTH) -> float:
    """(2 |pred & truth| + smooth) / (|pred| + |truth| + smooth)."""
    if smooth < 0:
        raise ValueError("smooth must be >= 0")
    st = overlap(pred, truth)
    return (2.0 * st.intersection + smooth) / (st.r_pred + st.r_inp + smooth)


def dice_loss(pred, truth, smooth: float = DICE_SMOOTH) -> float:
    return 1.0 - dice_coefficient(pred, truth, smooth)


def iou(pred, truth) -> float:
    """|pred & truth| / |pred | truth|; two empty regions count as a perfect match."""
    st = overlap(pred, truth)
    if st.union == 0:
        return 1.0
    return st.intersection / st.union


def _check_masks(pred_mask: LabelMask, truth_mask: LabelMask):
    if pred_mask.classes.shape != truth_mask.classes.shape:
        raise ShapeError(f"mask shapes differ: {pred_mask.classes.shape} vs {truth_mask.classes.shape}")


def class_dice(pred_mask: LabelMask, truth_mask: LabelMask, cls: int, smooth: float = DICE_SMOOTH) -> float:
    _check_masks(pred_mask, truth_mask)
    return dice_coefficient(pred_mask.classes == cls, truth_mask.classes == cls, smooth)


def class_iou(pred_mask: LabelMask, truth_mask: LabelMask, cls: int) -> float | None:
    """IoU for one class, or None when the class is absent from both masks."""
    _check_masks(pred_mask, truth_mask)
    st = overlap(pred_mask.classes == cls, truth_mask.classes == cls)
    if st.union == 0:
        return None
    return st.intersection / st.union


def mean_iou(pred_mask: LabelMask, truth_mask: LabelMask, classes: Iterable[int] = FOREGROUND_CLASSES) -> float:
    """Mean per-class IoU. Classes absent from both masks are left out of the mean.

    Returns NaN if every requested class is absent from both masks.
    """
    scores = [s for s in (class_iou(pred_mask, truth_mask, c) for c in classes) if s is not None]
    if not scores:
        return math.nan
    return float(sum(scores) / len(scores))


def soft_dice_loss(probs: Tensor, target: np.ndarray, classes: Sequence[int] = FOREGROUND_CLASSES,
                   smooth: float = DICE_SMOOTH) -> Tensor:
    """Differentiable multi-class dice loss.

    ``probs`` is (N, K, H, W) softmax output; ``target`` is an (N, H, W) array
    of class indices. Each listed class gets a soft dice over the whole batch
    and the loss is one minus their mean.
    """
    n, k, h, w = probs.shape
    if target.shape != (n, h, w):
        raise ShapeError(f"target shape {target.shape} does not match probs {probs.shape}")
    classes = list(classes)
    p = probs.data[:, classes].astype(np.float64)
    t = np.stack([(target == c) for c in classes], axis=1).astype(np.float64)
    inter = (p * t).sum(axis=(0, 2, 3))
    denom = p.sum(axis=(0, 2, 3)) + t.sum(axis=(0, 2, 3)) + smooth
    numer = 2.0 * inter + smooth
    dice = numer / denom
    loss = 1.0 - dice.mean()

    def backward(g):
        scale = float(g.reshape(-1)[0]) / len(classes)
        dp = -scale * (2.0 * t * denom[None, :, None, None] - numer[None, :, None, None]) / (denom ** 2)[None, :, None, None]
        full = np.zeros(probs.shape, dtype=np.float32)
        full[:, classes] = dp
        return (full,)

    return Tensor.from_op(np.array(loss, dtype=np.float32), (probs,), backward)


def regression_stats(pred: Sequence[float], truth: Sequence[float]) -> RegressionStats:
    """MSE, coefficient of determination and Pearson r of predictions against truth.

    A constant prediction has no linear association with the truth, so r is
    reported as 0 in that case.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise ShapeError(f"pred and truth must be equal-length vectors, got {p.shape} and {t.shape}")
    if p.size < 2:
        raise ShapeError("need at least two samples")
    t_centered = t - t.mean()
    ss_tot = float(np.dot(t_centered, t_centered))
    if ss_tot == 0:
        raise DegenerateInput("truth is constant; R^2 and r are undefined")
    resid = p - t
    ss_res = float(np.dot(resid, resid))
    mse = ss_res / p.size
    r2 = 1.0 - ss_res / ss_tot
    p_centered = p - p.mean()
    ss_p = float(np.dot(p_centered, p_centered))
    if ss_p == 0:
        r = 0.0
    else:
        r = float(np.dot(p_centered, t_centered) / math.sqrt(ss_p * ss_tot))
        r = max(-1.0, min(1.0, r))
    return RegressionStats(mse=mse, r2=r2, r=r)
