# pipeline/ensemble.py

"""
Combine several segmentation outputs of the same stack into one: averaging of
probability maps or majority voting of thresholded masks.
"""

from typing import Sequence

import numpy as np

from pipeline.errors import DimensionMismatchError, DomainError
from pipeline.volgrid import BinaryMask, ProbabilityMap, VoxelGrid


def _check_members(grids: Sequence[VoxelGrid]) -> None:
    if not grids:
        raise DomainError("An ensemble needs at least one member")
    first = grids[0]
    for i, grid in enumerate(grids[1:], start=1):
        if not grid.same_geometry(first):
            raise DimensionMismatchError(f"Ensemble member {i} has geometry {grid.dims}, expected {first.dims}")


def average_probabilities(maps: Sequence[ProbabilityMap]) -> ProbabilityMap:
    _check_members(maps)
    stacked = np.stack([m.voxels for m in maps])
    return ProbabilityMap(np.clip(stacked.mean(axis=0), 0.0, 1.0), maps[0].spacing)


def majority_vote(masks: Sequence[BinaryMask]) -> BinaryMask:
    """Foreground where strictly more than half of the members agree."""
    _check_members(masks)
    votes = np.sum([m.voxels for m in masks], axis=0, dtype=np.int64)
    return BinaryMask(2 * votes > len(masks), masks[0].spacing)
