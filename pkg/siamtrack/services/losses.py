"""
Training Objective
Focal foreground loss, bin cross-entropy with smooth-L1 residuals, and the weighted total
"""
from typing import Optional, Tuple, Union

import numpy as np

from siamtrack.core.config import LossConfig
from siamtrack.core.errors import ShapeMismatchError
from siamtrack.models.network import BinTargets, LossBreakdown
from siamtrack.services.nn import check_finite, softmax_rows
from siamtrack.services.rpn import AXES, ChannelLayout

PROBABILITY_CLAMP = 1e-7


def _positive(labels: np.ndarray) -> np.ndarray:
    # accepts {0, 1}, {-1, 1} or booleans
    return np.asarray(labels) > 0


def focal_loss(
    p: Union[float, np.ndarray],
    labels: Union[int, np.ndarray],
    alpha: float = 0.25,
    gamma: float = 2.0,
) -> np.ndarray:
    """
    Per-element focal loss -alpha_t (1 - p_t)^gamma log(p_t)

    alpha weighs positives, 1 - alpha negatives. p is clamped to [1e-7, 1 - 1e-7].
    """
    p = np.clip(np.asarray(p, dtype=np.float64), PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    positive = _positive(labels)
    p_t = np.where(positive, p, 1.0 - p)
    alpha_t = np.where(positive, alpha, 1.0 - alpha)
    return -alpha_t * (1.0 - p_t) ** gamma * np.log(p_t)


def focal_loss_grad(
    p: np.ndarray, labels: np.ndarray, alpha: float = 0.25, gamma: float = 2.0
) -> np.ndarray:
    """d focal / d p, zero where the clamp is active"""
    raw = np.asarray(p, dtype=np.float64)
    p = np.clip(raw, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    positive = _positive(labels)
    p_t = np.where(positive, p, 1.0 - p)
    alpha_t = np.where(positive, alpha, 1.0 - alpha)
    one_minus = 1.0 - p_t
    if gamma == 0.0:
        d_pt = -alpha_t / p_t
    else:
        d_pt = alpha_t * (gamma * one_minus ** (gamma - 1.0) * np.log(p_t) - one_minus**gamma / p_t)
    grad = np.where(positive, d_pt, -d_pt)
    clamped = (raw < PROBABILITY_CLAMP) | (raw > 1.0 - PROBABILITY_CLAMP)
    return np.where(clamped, 0.0, grad)


def smooth_l1(x: Union[float, np.ndarray]) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    magnitude = np.abs(x)
    return np.where(magnitude < 1.0, 0.5 * x * x, magnitude - 0.5)


def smooth_l1_grad(x: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)


def cross_entropy(logits: np.ndarray, target: Union[int, np.ndarray]) -> np.ndarray:
    """-log softmax(logits)[target], row-wise"""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    target = np.broadcast_to(np.asarray(target, dtype=np.int64), (len(logits),))
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return log_norm - shifted[np.arange(len(logits)), target]


def cross_entropy_grad(logits: np.ndarray, target: np.ndarray) -> np.ndarray:
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    grad = softmax_rows(logits)
    grad[np.arange(len(logits)), np.asarray(target, dtype=np.int64)] -= 1.0
    return grad


def regression_loss(
    reg: np.ndarray,
    targets: Union[BinTargets, np.ndarray],
    foreground: np.ndarray,
    layout: ChannelLayout,
) -> Tuple[float, float, int, np.ndarray]:
    """
    Bin and residual regression terms over foreground points

    Args:
        reg: (N, C) regression rows
        targets: BinTargets for the bin layout, (N, 7) arrays for the direct layout
        foreground: (N,) mask of supervised points; out-of-range bin targets are dropped
        layout: Channel layout of `reg`

    Returns:
        (bin_loss, res_loss, n_pos, grad_reg), both losses averaged over n_pos. The bin term
        holds the center and heading parts, the residual term the size parts.
    """
    reg = np.asarray(reg, dtype=np.float64)
    if reg.ndim != 2 or reg.shape[1] != layout.channels:
        raise ShapeMismatchError(f"expected {layout.channels} regression channels, got {reg.shape}")
    mask = np.asarray(foreground, dtype=bool).copy()
    if isinstance(targets, BinTargets):
        mask &= targets.in_range
    grad = np.zeros_like(reg)
    n_pos = int(mask.sum())
    if n_pos == 0:
        return 0.0, 0.0, 0, grad

    rows = np.flatnonzero(mask)
    offset = layout.residual_offset
    residuals = reg[rows, offset : offset + 7]

    if layout.kind == "bin":
        bins = targets.bins()[rows]
        center_targets = targets.center_residuals()[rows]
        size_targets = targets.size_residuals()[rows]
        bin_total = 0.0
        for axis_index, axis in enumerate(AXES):
            block = layout.logit_slices[axis]
            logits = reg[rows, block]
            bin_total += float(cross_entropy(logits, bins[:, axis_index]).sum())
            grad[rows, block] = cross_entropy_grad(logits, bins[:, axis_index])
    else:
        direct = np.asarray(targets, dtype=np.float64)[rows]
        center_targets, size_targets = direct[:, :4], direct[:, 4:]
        bin_total = 0.0

    # one residual slot per axis, so the true-bin residual is the axis slot
    center_diff = residuals[:, :4] - center_targets
    size_diff = residuals[:, 4:] - size_targets
    bin_total += float(smooth_l1(center_diff).sum())
    res_total = float(smooth_l1(size_diff).sum())
    grad[rows, offset : offset + 4] = smooth_l1_grad(center_diff)
    grad[rows, offset + 4 : offset + 7] = smooth_l1_grad(size_diff)

    grad /= n_pos
    return bin_total / n_pos, res_total / n_pos, n_pos, grad


def total_loss(
    scores: np.ndarray,
    labels: np.ndarray,
    reg: np.ndarray,
    targets: Union[BinTargets, np.ndarray],
    layout: ChannelLayout,
    config: Optional[LossConfig] = None,
    epoch: Optional[int] = None,
) -> Tuple[LossBreakdown, np.ndarray, np.ndarray]:
    """
    cls + lambda * (bin + res)

    Args:
        scores: (N,) foreground probabilities
        labels: (N,) foreground labels; the positives are also the regression mask
        reg: (N, C) regression rows
        targets: Regression targets for every point
        layout: Channel layout of `reg`
        config: focal alpha/gamma and the regression weight lambda
        epoch: Recorded on the breakdown

    Returns:
        (LossBreakdown, d total / d scores, d total / d reg)
    """
    config = config or LossConfig()
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(scores) == 0:
        raise ShapeMismatchError("loss needs at least one point")
    positive = _positive(labels)
    count = len(scores)

    cls_loss = float(focal_loss(scores, positive, config.focal_alpha, config.focal_gamma).sum() / count)
    grad_scores = focal_loss_grad(scores, positive, config.focal_alpha, config.focal_gamma) / count

    bin_loss, res_loss, n_pos, grad_reg = regression_loss(reg, targets, positive, layout)
    weight = config.reg_weight
    total = cls_loss + weight * (bin_loss + res_loss)
    check_finite(np.array([total]), "loss")
    breakdown = LossBreakdown(
        cls_loss=cls_loss,
        bin_loss=bin_loss,
        res_loss=res_loss,
        total=total,
        n_pos=n_pos,
        epoch=epoch,
    )
    return breakdown, grad_scores, weight * grad_reg
