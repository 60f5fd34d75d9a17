# pipeline/morph.py

"""
Morphological Postprocessing
----------------------------
Cleans thresholded segmentations: an opening erodes thin protrusions and
isolated voxels, then enclosed cavities are filled. Voxels outside the grid
count as background for every operation here.
"""

import logging
from enum import Enum

import numpy as np
from scipy import ndimage

from pipeline.errors import DomainError
from pipeline.volgrid import BinaryMask, ProbabilityMap, threshold

logger = logging.getLogger("ventriq.morph")


class StructuringElement(str, Enum):
    CROSS6 = "cross6"   # face neighbours
    CUBE26 = "cube26"   # full 3x3x3 neighbourhood

    def array(self) -> np.ndarray:
        connectivity = 1 if self is StructuringElement.CROSS6 else 3
        return ndimage.generate_binary_structure(3, connectivity)


class HoleMode(str, Enum):
    FILL = "fill"
    CLOSING = "closing"


def _check_iterations(iterations: int) -> int:
    if int(iterations) < 1:
        raise DomainError(f"Morphology iterations must be >= 1, got {iterations}")
    return int(iterations)


def erode(mask: BinaryMask, se: StructuringElement = StructuringElement.CROSS6, iterations: int = 1) -> BinaryMask:
    out = ndimage.binary_erosion(mask.foreground, structure=StructuringElement(se).array(),
                                 iterations=_check_iterations(iterations), border_value=0)
    return BinaryMask(out, mask.spacing)


def dilate(mask: BinaryMask, se: StructuringElement = StructuringElement.CROSS6, iterations: int = 1) -> BinaryMask:
    out = ndimage.binary_dilation(mask.foreground, structure=StructuringElement(se).array(),
                                  iterations=_check_iterations(iterations), border_value=0)
    return BinaryMask(out, mask.spacing)


def opening(mask: BinaryMask, se: StructuringElement = StructuringElement.CROSS6, iterations: int = 1) -> BinaryMask:
    return dilate(erode(mask, se, iterations), se, iterations)


def closing(mask: BinaryMask, se: StructuringElement = StructuringElement.CROSS6, iterations: int = 1) -> BinaryMask:
    return erode(dilate(mask, se, iterations), se, iterations)


def fill_holes(mask: BinaryMask) -> BinaryMask:
    """Turn background not 6-connected to the grid border into foreground."""
    filled = ndimage.binary_fill_holes(mask.foreground, structure=StructuringElement.CROSS6.array())
    return BinaryMask(filled, mask.spacing)


def postprocess(
    p: ProbabilityMap,
    t: float = 0.5,
    se: StructuringElement = StructuringElement.CROSS6,
    iterations: int = 1,
    hole_mode: HoleMode = HoleMode.FILL,
) -> BinaryMask:
    """
    threshold -> opening -> hole handling, always in that order.

    Args:
        p: Network output probabilities.
        t: Threshold, voxels with p >= t become foreground.
        se: Structuring element of the opening (and of the closing, if selected).
        iterations: Erosion/dilation repetitions of the opening.
        hole_mode: FILL fills enclosed cavities; CLOSING applies a morphological closing instead.
    """
    mask = threshold(p, t)
    opened = opening(mask, se, iterations)
    if HoleMode(hole_mode) is HoleMode.FILL:
        result = fill_holes(opened)
    else:
        result = closing(opened, se, iterations)
    logger.debug(f"Postprocess: {mask.count} -> {opened.count} (opening) -> {result.count} voxels")
    return result
