# tests/test_morph.py

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from conftest import UNIT, block_mask, mask_from_points
from pipeline.errors import DomainError
from pipeline.morph import (
    HoleMode, StructuringElement, closing, dilate, erode, fill_holes, opening, postprocess,
)
from pipeline.volgrid import BinaryMask, ProbabilityMap, as_probability, threshold

MASKS = arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)),
               elements=st.integers(0, 1))


def test_erode_examples():
    single = mask_from_points((3, 3, 3), [(1, 1, 1)])
    assert erode(single).is_empty()

    block = BinaryMask(np.ones((3, 3, 3)))
    eroded = erode(block)
    assert eroded.count == 1 and eroded.voxels[1, 1, 1] == 1

    empty = BinaryMask(np.zeros((3, 3, 3)))
    assert erode(empty).is_empty()


def test_dilate_examples():
    assert dilate(BinaryMask(np.zeros((3, 3, 3)))).is_empty()
    grown = dilate(mask_from_points((3, 3, 3), [(1, 1, 1)]))
    assert grown.count == 7
    assert dilate(mask_from_points((3, 3, 3), [(1, 1, 1)]), StructuringElement.CUBE26).count == 27


def test_iterations_must_be_positive():
    with pytest.raises(DomainError):
        erode(BinaryMask(np.zeros((2, 2, 2))), iterations=0)


@given(MASKS)
def test_opening_is_anti_extensive_and_closing_extensive(arr):
    mask = BinaryMask(arr)
    assert np.all(opening(mask).voxels <= mask.voxels)
    # Closing is only extensive away from the (background) grid border.
    padded = BinaryMask(np.pad(arr, 1))
    assert np.all(closing(padded).voxels >= padded.voxels)


@settings(max_examples=50)
@given(MASKS)
def test_fill_holes_matches_flood_fill_oracle(arr):
    mask = BinaryMask(arr)
    filled = fill_holes(mask)
    # Oracle: background components touching the grid border stay background.
    labels, _ = ndimage.label(arr == 0)
    border = np.zeros(arr.shape, dtype=bool)
    border[0], border[-1] = True, True
    border[:, 0], border[:, -1] = True, True
    border[:, :, 0], border[:, :, -1] = True, True
    outside = np.isin(labels, np.unique(labels[border & (labels > 0)]))
    assert np.array_equal(filled.foreground, ~outside | (arr == 1))
    assert np.all(filled.voxels >= mask.voxels)


def test_fill_holes_examples():
    solid = block_mask((7, 7, 7), np.s_[1:6, 1:6, 1:6])
    assert fill_holes(solid) == solid

    shell = np.zeros((7, 7, 7), dtype=np.uint8)
    shell[1:6, 1:6, 1:6] = 1
    shell[2:5, 2:5, 2:5] = 0
    assert fill_holes(BinaryMask(shell, UNIT)) == solid

    assert fill_holes(BinaryMask(np.zeros((3, 3, 3)))).is_empty()


def _ellipsoid(dims, centre, semi_axes) -> np.ndarray:
    z, y, x = np.indices(dims)
    (cz, cy, cx), (az, ay, ax) = centre, semi_axes
    return (((z - cz) / az) ** 2 + ((y - cy) / ay) ** 2 + ((x - cx) / ax) ** 2) <= 1.0


def test_postprocess_keeps_clean_ellipsoid():
    body = _ellipsoid((15, 21, 21), (7, 10, 10), (4, 6, 7))
    p = ProbabilityMap(body.astype(float))
    out = postprocess(p)
    plain = threshold(p)
    assert abs(out.count - plain.count) / plain.count < 0.3


def test_postprocess_removes_spurious_voxel_and_fills_hole():
    body = _ellipsoid((15, 21, 21), (7, 8, 8), (4, 5, 5)).astype(float)
    body[7, 8, 8] = 0.0          # enclosed hole
    body[1, 19, 19] = 1.0        # isolated speck
    out = postprocess(ProbabilityMap(body))
    assert out.voxels[7, 8, 8] == 1
    assert out.voxels[1, 19, 19] == 0


def test_postprocess_closing_mode_runs_after_opening():
    mask = block_mask((9, 9, 9), np.s_[2:7, 2:7, 2:7])
    out = postprocess(as_probability(mask), hole_mode=HoleMode.CLOSING)
    assert out == closing(opening(mask))


@given(MASKS)
def test_opening_is_idempotent(arr):
    once = opening(BinaryMask(arr))
    assert opening(once) == once
