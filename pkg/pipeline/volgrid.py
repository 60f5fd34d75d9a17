# pipeline/volgrid.py

"""
Voxel Grid Module
-----------------
Core voxel-grid types shared by every stage of the pipeline, plus the
geometric operations that act directly on them: resampling to the standard
grid, min-max normalization, thresholding, and volume/area measurement.

All voxel arrays are stored z-major, i.e. indexed (slice, row, column), and are
read-only once wrapped in a grid object.

The two resamplers align grids differently. Trilinear intensity resampling is
corner-aligned: the first and last samples land on the source corner voxels.
Nearest-neighbour mask resampling is centre-aligned: each output voxel reads the
source voxel under its centre, so the physical extent of the mask is kept. A mask
and its intensity stack resampled to the same dims can therefore be offset by up
to half an output voxel at the grid edges.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from pipeline.errors import DimensionMismatchError, DomainError

logger = logging.getLogger("ventriq.volgrid")

# Acquisition resolution of the source CINE stacks, in mm (dx, dy, dz).
DEFAULT_SPACING = (0.5, 0.5, 1.5)
# Standard (nz, ny, nx) grid all stacks are resized to before segmentation.
STANDARD_DIMS = (12, 86, 98)

Dims = Tuple[int, int, int]


@dataclass(frozen=True)
class Spacing:
    """Voxel edge lengths in mm."""
    dx: float = DEFAULT_SPACING[0]
    dy: float = DEFAULT_SPACING[1]
    dz: float = DEFAULT_SPACING[2]

    def __post_init__(self):
        for name in ("dx", "dy", "dz"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0:
                raise DomainError(f"Spacing {name} must be a positive finite length, got {value!r}")
            object.__setattr__(self, name, value)

    @property
    def voxel_volume(self) -> float:
        return self.dx * self.dy * self.dz

    @property
    def pixel_area(self) -> float:
        return self.dx * self.dy

    def zyx(self) -> Tuple[float, float, float]:
        """Spacing in array axis order."""
        return (self.dz, self.dy, self.dx)

    @classmethod
    def from_zyx(cls, values: Sequence[float]) -> "Spacing":
        dz, dy, dx = values
        return cls(dx=dx, dy=dy, dz=dz)


def _check_dims(dims: Sequence[int]) -> Dims:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise DomainError(f"Target dims must be three positive integers, got {dims}")
    return dims  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """A read-only 3D voxel array with its physical spacing."""
    voxels: np.ndarray
    spacing: Spacing = field(default_factory=Spacing)

    dtype = np.float64

    def __post_init__(self):
        arr = np.array(self.voxels, dtype=self.dtype, copy=True)
        if arr.ndim != 3 or any(n == 0 for n in arr.shape):
            raise DomainError(f"{type(self).__name__} needs a non-empty 3D array, got shape {arr.shape}")
        self._validate(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "voxels", arr)

    def _validate(self, arr: np.ndarray) -> None:
        if not np.all(np.isfinite(arr)):
            raise DomainError(f"{type(self).__name__} contains non-finite values")

    @property
    def dims(self) -> Dims:
        return self.voxels.shape  # type: ignore[return-value]

    def same_geometry(self, other: "VoxelGrid") -> bool:
        return self.dims == other.dims and self.spacing == other.spacing

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        return self.same_geometry(other) and np.array_equal(self.voxels, other.voxels)

    __hash__ = None  # type: ignore[assignment]


class IntensityVolume(VoxelGrid):
    """Magnitude MRI intensities, finite and non-negative."""

    def _validate(self, arr):
        super()._validate(arr)
        if arr.min() < 0:
            raise DomainError("IntensityVolume values must be >= 0 (magnitude images)")


class ProbabilityMap(VoxelGrid):
    """Per-voxel foreground probabilities in [0, 1]."""

    def _validate(self, arr):
        super()._validate(arr)
        if arr.min() < 0 or arr.max() > 1:
            raise DomainError("ProbabilityMap values must lie in [0, 1]")


class BinaryMask(VoxelGrid):
    """Foreground (1) / background (0) segmentation."""
    dtype = np.uint8

    def __post_init__(self):
        raw = np.asarray(self.voxels)
        if raw.dtype != np.bool_ and raw.size and not np.all((raw == 0) | (raw == 1)):
            raise DomainError("BinaryMask voxels must be 0 or 1")
        super().__post_init__()

    def _validate(self, arr):
        pass

    @property
    def foreground(self) -> np.ndarray:
        return self.voxels.astype(bool)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.voxels))

    def is_empty(self) -> bool:
        return self.count == 0


@dataclass(frozen=True)
class Phase:
    index: int
    mask: BinaryMask
    intensity: Optional[IntensityVolume] = None


@dataclass(frozen=True)
class StackSeries:
    """Time-ordered image stacks of one cardiac cycle."""
    phases: Tuple[Phase, ...]

    def __post_init__(self):
        phases = tuple(self.phases)
        if len(phases) < 2:
            raise DomainError(f"A stack series needs at least 2 phases, got {len(phases)}")
        first = phases[0].mask
        for phase in phases:
            if not phase.mask.same_geometry(first):
                raise DimensionMismatchError(
                    f"Phase {phase.index}: mask geometry {phase.mask.dims}/{phase.mask.spacing} "
                    f"differs from phase {phases[0].index}")
            if phase.intensity is not None and not phase.intensity.same_geometry(first):
                raise DimensionMismatchError(f"Phase {phase.index}: intensity geometry differs from its mask")
        indices = [p.index for p in phases]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise DomainError(f"Phase indices must be strictly increasing, got {indices}")
        object.__setattr__(self, "phases", phases)

    def __len__(self):
        return len(self.phases)

    @property
    def dims(self) -> Dims:
        return self.phases[0].mask.dims

    @property
    def spacing(self) -> Spacing:
        return self.phases[0].mask.spacing

    @property
    def phase_indices(self) -> Tuple[int, ...]:
        return tuple(p.index for p in self.phases)

    @property
    def masks(self) -> Tuple[BinaryMask, ...]:
        return tuple(p.mask for p in self.phases)

    @property
    def has_intensities(self) -> bool:
        return all(p.intensity is not None for p in self.phases)

    def with_intensities(self, intensities: Sequence[IntensityVolume]) -> "StackSeries":
        if len(intensities) != len(self.phases):
            raise DomainError("One intensity volume per phase is required")
        return StackSeries(tuple(Phase(p.index, p.mask, vol) for p, vol in zip(self.phases, intensities)))

    def with_masks(self, masks: Sequence[BinaryMask]) -> "StackSeries":
        if len(masks) != len(self.phases):
            raise DomainError("One mask per phase is required")
        return StackSeries(tuple(Phase(p.index, m, p.intensity) for p, m in zip(self.phases, masks)))


# --- Measurement ---

def mask_volume(mask: BinaryMask) -> float:
    """Foreground volume in mm^3 (voxel count times voxel volume)."""
    return mask.count * mask.spacing.voxel_volume


def slice_areas(mask: BinaryMask) -> np.ndarray:
    """Foreground area of every axial slice, in mm^2."""
    counts = mask.voxels.reshape(mask.dims[0], -1).sum(axis=1, dtype=np.int64)
    return counts * mask.spacing.pixel_area


# --- Resampling ---

def resample_trilinear(vol: IntensityVolume, target_dims: Sequence[int]) -> IntensityVolume:
    """
    Trilinear resize onto `target_dims`.

    Output sample i along an axis of source length n and target length m sits at
    source coordinate i * (n - 1) / (m - 1) (corner-aligned), so the first and
    last samples coincide with the source corners. Spacing is rescaled by n / m
    to keep the physical extent.
    """
    target = _check_dims(target_dims)
    if target == vol.dims:
        return IntensityVolume(vol.voxels, vol.spacing)

    axes = []
    for n_src, n_out in zip(vol.dims, target):
        if n_out == 1:
            axes.append(np.array([(n_src - 1) / 2.0]))
        else:
            axes.append(np.linspace(0.0, n_src - 1, n_out))
    coords = np.meshgrid(*axes, indexing="ij")
    values = ndimage.map_coordinates(vol.voxels, coords, order=1, mode="nearest")
    # Linear weights can overshoot by an ulp; keep the source range.
    values = np.clip(values, vol.voxels.min(), vol.voxels.max())

    spacing = _rescaled_spacing(vol.spacing, vol.dims, target)
    logger.debug(f"Resampled intensity volume {vol.dims} -> {target}")
    return IntensityVolume(values, spacing)


def resample_mask_nearest(mask: BinaryMask, target_dims: Sequence[int]) -> BinaryMask:
    """
    Nearest-neighbour resize of a mask. Output voxel i takes the source voxel whose
    centre is nearest to its own centre: floor((i + 0.5) * n / m). This is
    centre-aligned, unlike the corner-aligned `resample_trilinear`.
    """
    target = _check_dims(target_dims)
    index = [
        np.minimum(np.floor((np.arange(n_out) + 0.5) * n_src / n_out).astype(np.int64), n_src - 1)
        for n_src, n_out in zip(mask.dims, target)
    ]
    values = mask.voxels[np.ix_(*index)]
    return BinaryMask(values, _rescaled_spacing(mask.spacing, mask.dims, target))


def _rescaled_spacing(spacing: Spacing, src: Dims, target: Dims) -> Spacing:
    dz, dy, dx = (s * n_src / n_out for s, n_src, n_out in zip(spacing.zyx(), src, target))
    return Spacing(dx=dx, dy=dy, dz=dz)


# --- Intensity and probability transforms ---

def normalize_minmax(vol: IntensityVolume) -> IntensityVolume:
    """Map a whole stack to [0, 1]; constant stacks map to all zeros."""
    lo, hi = float(vol.voxels.min()), float(vol.voxels.max())
    if hi == lo:
        return IntensityVolume(np.zeros(vol.dims), vol.spacing)
    values = (vol.voxels - lo) / (hi - lo)
    return IntensityVolume(np.clip(values, 0.0, 1.0), vol.spacing)


def threshold(p: ProbabilityMap, t: float = 0.5) -> BinaryMask:
    """Foreground where p >= t."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"Threshold must lie in [0, 1], got {t}")
    return BinaryMask(p.voxels >= t, p.spacing)


def as_probability(mask: BinaryMask) -> ProbabilityMap:
    """View a hard mask as a 0/1 probability map (for re-running postprocessing)."""
    return ProbabilityMap(mask.voxels.astype(np.float64), mask.spacing)
