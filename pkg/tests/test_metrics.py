# tests/test_metrics.py

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.distance import cdist

from conftest import mask_from_points
from evaluation.metrics import (
    LossConfig, dice, hausdorff, hausdorff_directed, icc_2_1, slice_dice, soft_dice_loss,
    weight_map, weighted_dice_loss,
)
from pipeline.errors import DimensionMismatchError, DomainError, EmptyMaskError
from pipeline.volgrid import BinaryMask, ProbabilityMap, Spacing

MASKS = arrays(np.uint8, (3, 4, 4), elements=st.integers(0, 1))

# Shrout & Fleiss (1979) worked example: 6 targets rated by 4 judges.
SHROUT_FLEISS = [[9, 2, 5, 8], [6, 1, 3, 2], [8, 4, 6, 8], [7, 1, 2, 6], [10, 5, 6, 9], [6, 2, 4, 7]]


def _line(values) -> BinaryMask:
    return BinaryMask(np.asarray(values, dtype=np.uint8).reshape(1, 1, -1))


# --- Dice ---

def test_dice_examples():
    a = mask_from_points((2, 2, 2), [(0, 0, 0), (0, 0, 1)])
    b = mask_from_points((2, 2, 2), [(0, 0, 1), (1, 1, 1)])
    assert dice(a, a) == 1.0
    assert dice(a, mask_from_points((2, 2, 2), [(1, 1, 0)])) == 0.0
    assert dice(a, b) == 0.5
    empty = BinaryMask(np.zeros((2, 2, 2)))
    assert dice(empty, empty) == 1.0


@given(MASKS, MASKS)
def test_dice_is_symmetric_and_bounded(x, y):
    a, b = BinaryMask(x), BinaryMask(y)
    assert dice(a, b) == dice(b, a)
    assert 0.0 <= dice(a, b) <= 1.0


def test_dice_needs_matching_dims():
    with pytest.raises(DimensionMismatchError):
        dice(BinaryMask(np.zeros((2, 2, 2))), BinaryMask(np.zeros((2, 2, 3))))


def test_slice_dice():
    a = np.zeros((3, 2, 2), dtype=np.uint8)
    b = np.zeros((3, 2, 2), dtype=np.uint8)
    a[1, 0, :] = 1
    b[1, :, 0] = 1
    b[2, 0, 0] = 1
    assert slice_dice(BinaryMask(a), BinaryMask(b)) == [1.0, 0.5, 0.0]


# --- Losses ---

def test_soft_dice_loss_examples():
    t = _line([1, 1, 0, 0])
    assert soft_dice_loss(t, ProbabilityMap(t.voxels.astype(float))) == pytest.approx(-0.2)
    assert soft_dice_loss(t, ProbabilityMap(np.full((1, 1, 4), 0.5))) == pytest.approx(0.2)


def test_soft_dice_loss_vanishes_for_large_perfect_predictions():
    t = _line([1, 0] * 5000)
    assert abs(soft_dice_loss(t, ProbabilityMap(t.voxels.astype(float)))) < 0.01


def test_weight_map_empty_mask_is_class_weights():
    w = weight_map(BinaryMask(np.zeros((2, 3, 3))), LossConfig(class_weights=(1.5, 4.0)))
    assert np.all(w.voxels == 1.5)


def test_weight_map_border_voxel_of_single_component():
    block = np.zeros((5, 5, 5), dtype=np.uint8)
    block[1:4, 1:4, 1:4] = 1
    w = weight_map(BinaryMask(block))
    assert w.voxels[1, 1, 1] == pytest.approx(3.0)
    # Interior voxel is one step from the border: d1 = d2 = 1.
    assert w.voxels[2, 2, 2] == pytest.approx(1.0 + 2.0 * math.exp(-2.0))


def test_weight_map_matches_brute_force_two_components():
    values = [1, 1, 0, 0, 0, 1, 1, 1]
    w = weight_map(_line(values))
    # On a one-voxel-thick grid every component voxel is a border voxel.
    components = [[0, 1], [5, 6, 7]]
    for i, v in enumerate(values):
        d1, d2 = sorted(min(abs(i - j) for j in comp) for comp in components)
        expected = 1.0 + 2.0 * math.exp(-((d1 + d2) ** 2) / 2.0)
        assert w.voxels[0, 0, i] == pytest.approx(expected, abs=1e-9)


def test_weighted_dice_loss_reduces_to_scaled_soft_loss():
    t = _line([1, 1, 0, 0])
    p = ProbabilityMap(np.array([0.9, 0.6, 0.3, 0.1]).reshape(1, 1, 4))
    plain = LossConfig(w0=0.0)
    assert weighted_dice_loss(t, p, plain) == pytest.approx(4 * soft_dice_loss(t, p, plain))
    doubled = LossConfig(w0=0.0, class_weights=(2.0, 2.0))
    assert weighted_dice_loss(t, p, doubled) == 2 * weighted_dice_loss(t, p, plain)


def test_weighted_dice_loss_defaults():
    t = _line([1, 1, 0, 0])
    total = 3.0 + 3.0 + (1.0 + 2.0 * math.exp(-2.0)) + (1.0 + 2.0 * math.exp(-8.0))
    loss = weighted_dice_loss(t, ProbabilityMap(t.voxels.astype(float)))
    assert loss == pytest.approx(total * -0.2)


def test_loss_config_validation():
    with pytest.raises(DomainError):
        LossConfig(epsilon=0.0)
    with pytest.raises(DomainError):
        LossConfig(class_weights=(1.0, 0.0))


# --- Hausdorff ---

def test_hausdorff_examples():
    a = mask_from_points((1, 1, 4), [(0, 0, 0)])
    b = mask_from_points((1, 1, 4), [(0, 0, 3)])
    assert hausdorff(a, a) == 0.0
    assert hausdorff_directed(a, b, use_spacing=False) == 3.0

    c = mask_from_points((1, 1, 4), [(0, 0, 0), (0, 0, 2)])
    assert hausdorff_directed(a, c, use_spacing=False) == 0.0
    assert hausdorff_directed(c, a, use_spacing=False) == 2.0
    assert hausdorff(a, c, use_spacing=False) == 2.0


def test_hausdorff_uses_spacing():
    a = mask_from_points((4, 1, 1), [(0, 0, 0)])
    b = mask_from_points((4, 1, 1), [(2, 0, 0)])
    assert hausdorff(a, b) == pytest.approx(2.0)

    # dz = 1.5 mm
    a = mask_from_points((4, 1, 1), [(0, 0, 0)], spacing=Spacing())
    b = mask_from_points((4, 1, 1), [(2, 0, 0)], spacing=Spacing())
    assert hausdorff(a, b) == pytest.approx(3.0)
    assert hausdorff(a, b, use_spacing=False) == 2.0


def test_hausdorff_rejects_empty_masks():
    a = mask_from_points((2, 2, 2), [(0, 0, 0)])
    with pytest.raises(EmptyMaskError):
        hausdorff(a, BinaryMask(np.zeros((2, 2, 2))))


@settings(max_examples=50)
@given(MASKS, MASKS)
def test_hausdorff_matches_brute_force(x, y):
    assume(x.any() and y.any())
    pa, pb = np.argwhere(x).astype(float), np.argwhere(y).astype(float)
    d = cdist(pa, pb)
    expected = max(d.min(axis=1).max(), d.min(axis=0).max())
    assert hausdorff(BinaryMask(x), BinaryMask(y), use_spacing=False) == pytest.approx(expected, rel=1e-12)


# --- ICC ---

def _anova_icc(y, form="2,1") -> float:
    """ICC from mean squares, with the error sum of squares taken as the remainder of the total."""
    y = np.asarray(y, dtype=float)
    n, k = y.shape
    grand = y.mean()
    msr = k * np.sum((y.mean(axis=1) - grand) ** 2) / (n - 1)
    msc = n * np.sum((y.mean(axis=0) - grand) ** 2) / (k - 1)
    mse = (np.sum((y - grand) ** 2) - (n - 1) * msr - (k - 1) * msc) / ((n - 1) * (k - 1))
    if form == "3,1":
        return float((msr - mse) / (msr + (k - 1) * mse))
    return float((msr - mse) / (msr + (k - 1) * mse + k * (msc - mse) / n))


def test_icc_identical_raters():
    column = [[v, v] for v in (3.0, 7.0, 1.0, 9.0)]
    assert icc_2_1(column).icc == pytest.approx(1.0, abs=1e-9)
    assert icc_2_1(column, form="3,1").icc == pytest.approx(1.0, abs=1e-9)


def test_icc_constant_offset_matches_anova_oracle():
    y = np.array([(1, 2), (2, 3), (3, 4), (4, 5), (5, 6)], dtype=float)
    assert icc_2_1(y).icc == pytest.approx(_anova_icc(y), abs=1e-9)
    assert icc_2_1(y).icc == pytest.approx(5.0 / 6.0, abs=1e-9)
    assert icc_2_1(y, form="3,1").icc == pytest.approx(1.0, abs=1e-9)


def test_icc_shrout_fleiss_example():
    icc2 = icc_2_1(SHROUT_FLEISS, "2,1")
    icc3 = icc_2_1(SHROUT_FLEISS, "3,1")
    assert icc2.icc == pytest.approx(_anova_icc(SHROUT_FLEISS, "2,1"), abs=1e-9)
    assert icc3.icc == pytest.approx(_anova_icc(SHROUT_FLEISS, "3,1"), abs=1e-9)
    # published to two decimals
    assert icc2.icc == pytest.approx(0.29, abs=0.01)
    assert icc3.icc == pytest.approx(0.71, abs=0.01)
    for result in (icc2, icc3):
        assert result.ci_low < result.icc < result.ci_high


@settings(max_examples=100)
@given(
    arrays(np.float64, (6, 3), elements=st.floats(0.0, 100.0)),
    st.floats(-1000.0, 1000.0),
    st.floats(0.01, 100.0),
    st.sampled_from(["2,1", "3,1"]),
)
def test_icc_is_invariant_to_shift_and_positive_scale(ratings, shift, scale, form):
    assume(ratings.std() > 1.0)
    residuals = ratings - ratings.mean(axis=1, keepdims=True) - ratings.mean(axis=0, keepdims=True) + ratings.mean()
    # exact agreement is a special case reported as (1, 1, 1) without an interval
    assume(np.sum(residuals ** 2) > 1e-6 * np.sum((ratings - ratings.mean()) ** 2))
    base = icc_2_1(ratings, form)
    moved = icc_2_1(scale * ratings + shift, form)
    assert moved.icc == pytest.approx(base.icc, abs=1e-9)
    assert moved.ci_low == pytest.approx(base.ci_low, rel=1e-6, abs=1e-9)
    assert moved.ci_high == pytest.approx(base.ci_high, rel=1e-6, abs=1e-9)


def test_icc_of_unrelated_raters_is_near_zero():
    ratings = np.random.default_rng(31).normal(50.0, 10.0, (1000, 2))
    assert abs(icc_2_1(ratings).icc) < 0.15


def test_icc_degenerate_and_invalid_inputs():
    assert icc_2_1(np.zeros((4, 2))) == (1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        icc_2_1([[1, 2], [3, 4]])
    with pytest.raises(DomainError):
        icc_2_1(SHROUT_FLEISS, form="1,1")


@settings(max_examples=50)
@given(arrays(np.float64, (4, 5, 5), elements=st.floats(0, 1)), MASKS.map(lambda a: np.pad(a, ((0, 1), (0, 1), (0, 1)))))
def test_soft_dice_loss_matches_naive_sum(p, t):
    loss = soft_dice_loss(BinaryMask(t), ProbabilityMap(p))
    tp = sum(float(a) * float(b) for a, b in zip(t.ravel(), p.ravel()))
    t_plus_p = sum(float(a) + float(b) for a, b in zip(t.ravel(), p.ravel()))
    tn = sum((1.0 - a) * (1.0 - b) for a, b in zip(t.ravel(), p.ravel()))
    rest = sum(2.0 - a - b for a, b in zip(t.ravel(), p.ravel()))
    expected = 1.0 - (tp + 1.0) / (t_plus_p + 1.0) - (tn + 1.0) / (rest + 1.0)
    assert loss == pytest.approx(expected, abs=1e-12)
