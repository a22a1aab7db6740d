"""
Test Training Objective
"""
import math

import numpy as np
import pytest

from siamtrack.core.config import BinConfig, LossConfig
from siamtrack.models.geometry import Box3D
from siamtrack.services.gradcheck import numerical_check
from siamtrack.services.losses import (
    cross_entropy,
    focal_loss,
    focal_loss_grad,
    regression_loss,
    smooth_l1,
    smooth_l1_grad,
    total_loss,
)
from siamtrack.services.rpn import ChannelLayout, encode_targets, targets_to_reg

BINS = BinConfig()
LAYOUT = ChannelLayout.from_config(BINS)
ANCHOR = (1.6, 1.5, 3.9)


def test_focal_loss_values():
    """Direct substitutions at p = 0.5 and p = 0.9 for a positive"""
    assert math.isclose(float(focal_loss(0.5, 1)), 0.25 * 0.25 * math.log(2.0), rel_tol=1e-12)
    assert math.isclose(float(focal_loss(0.5, 1)), 0.043321, rel_tol=1e-4)
    assert math.isclose(float(focal_loss(0.9, 1)), 2.6341e-4, rel_tol=1e-4)
    assert float(focal_loss(1.0 - 1e-12, 1)) < 1e-12


def test_focal_loss_negative_uses_complement_alpha():
    """Negatives are weighted by 1 - alpha and scored on 1 - p"""
    expected = 0.75 * 0.5**2 * math.log(2.0)
    assert math.isclose(float(focal_loss(0.5, -1)), expected, rel_tol=1e-12)
    assert math.isclose(float(focal_loss(0.5, 0)), expected, rel_tol=1e-12)


def test_focal_loss_decreasing_and_nonnegative():
    """Loss falls as p_t grows and never goes below zero"""
    p = np.linspace(0.01, 0.99, 99)
    losses = focal_loss(p, np.ones_like(p))
    assert np.all(np.diff(losses) < 0.0)
    assert np.all(focal_loss(p, np.zeros_like(p)) >= 0.0)


def test_focal_loss_degenerates_to_cross_entropy():
    """gamma = 0, alpha = 1 is -log p_t"""
    p = np.linspace(0.05, 0.95, 19)
    np.testing.assert_allclose(focal_loss(p, np.ones_like(p), alpha=1.0, gamma=0.0), -np.log(p), atol=1e-12)


def test_focal_gradient_matches_finite_difference():
    """Analytic d loss / d p agrees with central differences"""
    p = np.array([0.1, 0.3, 0.5, 0.8, 0.95])
    labels = np.array([1, -1, 1, -1, 1])
    for gamma in (0.0, 2.0):
        analytic = focal_loss_grad(p, labels, gamma=gamma)
        step = 1e-6
        numeric = (focal_loss(p + step, labels, gamma=gamma) - focal_loss(p - step, labels, gamma=gamma)) / (2 * step)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6)


def test_smooth_l1_values_and_continuity():
    """Closed forms and a continuous derivative at |x| = 1"""
    assert float(smooth_l1(0.0)) == 0.0
    assert float(smooth_l1(2.0)) == 1.5
    assert float(smooth_l1(0.5)) == 0.125
    step = 1e-7
    for x in (1.0, -1.0):
        left = (smooth_l1(x) - smooth_l1(x - step)) / step
        right = (smooth_l1(x + step) - smooth_l1(x)) / step
        assert math.isclose(float(left), math.copysign(1.0, x), abs_tol=1e-6)
        assert math.isclose(float(right), math.copysign(1.0, x), abs_tol=1e-6)
        assert float(smooth_l1_grad(np.array(x))) == math.copysign(1.0, x)


def test_cross_entropy_uniform_logits():
    """Uniform logits over 12 bins cost ln 12"""
    assert math.isclose(float(cross_entropy(np.zeros(12), 4)[0]), math.log(12.0), rel_tol=1e-12)


def test_regression_loss_hand_assembled():
    """Uniform logits and zero residuals against the target-at-point encoding"""
    point = np.zeros((1, 3))
    gt = Box3D(cx=0.0, cy=0.0, cz=0.0, w=2.0, h=1.5, l=3.9, ry=0.0)
    targets = encode_targets(point, gt, ANCHOR, BINS)
    assert targets.bin_x[0] == 6 and targets.res_x[0] == -0.5

    bin_loss, res_loss, n_pos, _ = regression_loss(np.zeros((1, 47)), targets, np.array([True]), LAYOUT)
    cross_entropies = 3 * math.log(12.0) + math.log(4.0)
    center_residuals = 3 * 0.125 + float(smooth_l1(targets.res_ry[0]))
    size_terms = float(smooth_l1((2.0 - 1.6) / 1.6))
    assert n_pos == 1
    assert math.isclose(bin_loss, cross_entropies + center_residuals, rel_tol=1e-12)
    assert math.isclose(res_loss, size_terms, rel_tol=1e-12)


def test_regression_loss_perfect_fit(rng):
    """Saturated correct logits with exact residuals cost nothing"""
    points = rng.uniform(-1, 1, size=(8, 3))
    points[:, 2] *= 0.3
    gt = Box3D(cx=0.3, cy=-0.2, cz=0.1, w=1.7, h=1.4, l=4.2, ry=1.0)
    targets = encode_targets(points, gt, ANCHOR, BINS)
    reg = targets_to_reg(targets, LAYOUT, confidence=50.0)
    bin_loss, res_loss, n_pos, _ = regression_loss(reg, targets, np.ones(8, dtype=bool), LAYOUT)
    assert n_pos == 8
    assert bin_loss < 1e-12 and res_loss == 0.0


def test_regression_loss_without_foreground():
    """No foreground points returns zeros with n_pos = 0"""
    targets = encode_targets(np.zeros((3, 3)), Box3D(cx=0, cy=0, cz=0, w=1, h=1, l=1, ry=0), ANCHOR, BINS)
    bin_loss, res_loss, n_pos, grad = regression_loss(np.ones((3, 47)), targets, np.zeros(3, dtype=bool), LAYOUT)
    assert (bin_loss, res_loss, n_pos) == (0.0, 0.0, 0)
    assert not grad.any()


def test_residual_gradient_only_in_residual_slots(rng):
    """Residual supervision touches one slot per axis; no gradient reaches unsupervised rows"""
    points = rng.uniform(-1, 1, size=(5, 3))
    points[:, 2] *= 0.3
    targets = encode_targets(points, Box3D(cx=0, cy=0, cz=0, w=1, h=1, l=1, ry=0.3), ANCHOR, BINS)
    reg = rng.standard_normal((5, 47))
    foreground = np.array([True, False, True, False, True])
    _, _, _, grad = regression_loss(reg, targets, foreground, LAYOUT)
    assert not grad[~foreground].any()
    assert np.all(grad[foreground, 40:47] != 0.0)


def _loss_case(rng, count=12):
    points = rng.uniform(-1, 1, size=(count, 3))
    points[:, 2] *= 0.3
    gt = Box3D(cx=0.2, cy=0.1, cz=0.0, w=1.2, h=1.0, l=1.6, ry=0.4)
    targets = encode_targets(points, gt, ANCHOR, BINS)
    labels = np.arange(count) % 3 == 0
    scores = rng.uniform(0.05, 0.95, count)
    reg = rng.standard_normal((count, 47))
    return scores, labels, reg, targets


def test_total_loss_breakdown(rng):
    """total = cls + lambda (bin + res)"""
    scores, labels, reg, targets = _loss_case(rng)
    breakdown, _, _ = total_loss(scores, labels, reg, targets, LAYOUT, LossConfig(reg_weight=10.0), epoch=3)
    expected = breakdown.cls_loss + 10.0 * (breakdown.bin_loss + breakdown.res_loss)
    assert math.isclose(breakdown.total, expected, abs_tol=1e-9)
    assert breakdown.n_pos == 4 and breakdown.epoch == 3
    assert math.isclose(breakdown.cls_loss, float(np.mean(focal_loss(scores, labels))), rel_tol=1e-12)


def test_total_loss_cls_only_cases(rng):
    """No foreground, or lambda = 0, leaves only the classification term"""
    scores, labels, reg, targets = _loss_case(rng)
    no_foreground, _, _ = total_loss(scores, np.zeros_like(labels), reg, targets, LAYOUT)
    assert no_foreground.total == no_foreground.cls_loss and no_foreground.n_pos == 0

    unweighted, _, grad_reg = total_loss(scores, labels, reg, targets, LAYOUT, LossConfig(reg_weight=0.0))
    assert unweighted.total == unweighted.cls_loss
    assert not grad_reg.any()


@pytest.mark.parametrize("weight", [0.1, 0.5, 1.0, 5.0, 10.0, 20.0])
def test_total_loss_weight_grid(rng, weight):
    """Every regression weight of the ablation grid is accepted"""
    scores, labels, reg, targets = _loss_case(rng)
    breakdown, _, _ = total_loss(scores, labels, reg, targets, LAYOUT, LossConfig(reg_weight=weight))
    assert math.isclose(breakdown.total, breakdown.cls_loss + weight * (breakdown.bin_loss + breakdown.res_loss), abs_tol=1e-9)


def test_total_loss_gradient(rng):
    """The whole objective passes the finite-difference check"""
    scores, labels, reg, targets = _loss_case(rng)
    _, grad_scores, grad_reg = total_loss(scores, labels, reg, targets, LAYOUT)

    def objective() -> float:
        return total_loss(scores, labels, reg, targets, LAYOUT)[0].total

    result = numerical_check(
        objective,
        {"scores": scores, "reg": reg},
        {"scores": grad_scores, "reg": grad_reg},
        detect_nondifferentiable=True,
        name="loss",
    )
    assert result.passed(1e-4), result


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
