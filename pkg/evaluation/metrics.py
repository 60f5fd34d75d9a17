# evaluation/metrics.py

"""
Segmentation Metrics
--------------------
Overlap and distance scores for comparing a predicted LV mask with a reference
(Dice, per-slice Dice, Hausdorff), the soft Dice training loss and its
border-weighted variant, and the intraclass correlation used for volume
reliability.
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy import ndimage, stats
from scipy.spatial.distance import directed_hausdorff

from pipeline.errors import DimensionMismatchError, DomainError, EmptyMaskError
from pipeline.morph import StructuringElement
from pipeline.volgrid import BinaryMask, ProbabilityMap, VoxelGrid

logger = logging.getLogger("ventriq.metrics")


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 1.0
    w0: float = 2.0
    sigma: float = 1.0
    # (background, foreground)
    class_weights: Tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.w0 >= 0:
            raise DomainError(f"w0 must be >= 0, got {self.w0}")
        if not self.sigma > 0:
            raise DomainError(f"sigma must be > 0, got {self.sigma}")
        if len(self.class_weights) != 2 or min(self.class_weights) <= 0:
            raise DomainError(f"class_weights must be two positive values, got {self.class_weights}")
        object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))


class WeightMap(VoxelGrid):
    """Per-voxel loss weights, strictly positive."""

    def _validate(self, arr):
        super()._validate(arr)
        if arr.min() <= 0:
            raise DomainError("Weight map values must be > 0")

    @property
    def total(self) -> float:
        return float(self.voxels.sum())


def _check_pair(a: VoxelGrid, b: VoxelGrid) -> None:
    if a.dims != b.dims:
        raise DimensionMismatchError(f"Cannot compare grids of dims {a.dims} and {b.dims}")


# --- Overlap ---

def dice(a: BinaryMask, b: BinaryMask) -> float:
    """2|A n B| / (|A| + |B|); 1.0 when both masks are empty."""
    _check_pair(a, b)
    total = a.count + b.count
    if total == 0:
        return 1.0
    overlap = int(np.count_nonzero(a.foreground & b.foreground))
    return 2.0 * overlap / total


def slice_dice(a: BinaryMask, b: BinaryMask) -> List[float]:
    """Dice of every axial slice; slices empty in both masks score 1.0."""
    _check_pair(a, b)
    fa, fb = a.foreground, b.foreground
    overlap = np.count_nonzero(fa & fb, axis=(1, 2))
    total = np.count_nonzero(fa, axis=(1, 2)) + np.count_nonzero(fb, axis=(1, 2))
    return [1.0 if s == 0 else 2.0 * float(o) / float(s) for o, s in zip(overlap, total)]


# --- Losses ---

def soft_dice_loss(t: BinaryMask, p: ProbabilityMap, cfg: LossConfig = LossConfig()) -> float:
    """
    1 - (sum t*p + eps) / (sum (t + p) + eps)
      - (sum (1-t)(1-p) + eps) / (sum (2 - t - p) + eps)
    """
    _check_pair(t, p)
    tv = t.voxels.astype(np.float64)
    pv = p.voxels
    eps = cfg.epsilon
    foreground = (np.sum(tv * pv) + eps) / (np.sum(tv + pv) + eps)
    background = (np.sum((1.0 - tv) * (1.0 - pv)) + eps) / (np.sum(2.0 - tv - pv) + eps)
    return float(1.0 - foreground - background)


def _component_border_distances(t: BinaryMask) -> List[np.ndarray]:
    """Distance (voxel units) from every voxel to the border of each 26-connected component."""
    labels, n = ndimage.label(t.foreground, structure=StructuringElement.CUBE26.array())
    cross = StructuringElement.CROSS6.array()
    distances = []
    for label in range(1, n + 1):
        component = labels == label
        border = component & ~ndimage.binary_erosion(component, structure=cross, border_value=0)
        distances.append(ndimage.distance_transform_edt(~border))
    return distances


def weight_map(t: BinaryMask, cfg: LossConfig = LossConfig()) -> WeightMap:
    """
    w_c(t_i) + w0 * exp(-(d1 + d2)^2 / (2 sigma^2)), d1 and d2 the distances to the
    nearest and second-nearest component border. A single component uses d2 = d1;
    an empty mask leaves only the class weights.
    """
    class_weight = np.where(t.foreground, cfg.class_weights[1], cfg.class_weights[0])
    distances = _component_border_distances(t)
    if not distances:
        return WeightMap(class_weight, t.spacing)

    stacked = np.sort(np.stack(distances), axis=0)
    d1 = stacked[0]
    d2 = stacked[1] if len(distances) > 1 else d1
    border_term = cfg.w0 * np.exp(-((d1 + d2) ** 2) / (2.0 * cfg.sigma ** 2))
    logger.debug(f"Weight map over {len(distances)} component(s)")
    return WeightMap(class_weight + border_term, t.spacing)


def weighted_dice_loss(t: BinaryMask, p: ProbabilityMap, cfg: LossConfig = LossConfig()) -> float:
    """Total weight-map mass times the soft Dice loss."""
    _check_pair(t, p)
    return weight_map(t, cfg).total * soft_dice_loss(t, p, cfg)


# --- Distances ---

def _voxel_centres(mask: BinaryMask, use_spacing: bool) -> np.ndarray:
    points = np.argwhere(mask.foreground).astype(np.float64)
    if use_spacing:
        points *= np.asarray(mask.spacing.zyx())
    return points


def hausdorff_directed(a: BinaryMask, b: BinaryMask, use_spacing: bool = True) -> float:
    """max over centres of A of the distance to the nearest centre of B."""
    _check_pair(a, b)
    if a.is_empty() or b.is_empty():
        raise EmptyMaskError("Hausdorff distance is undefined for an empty mask")
    distance, _, _ = directed_hausdorff(_voxel_centres(a, use_spacing), _voxel_centres(b, use_spacing))
    return float(distance)


def hausdorff(a: BinaryMask, b: BinaryMask, use_spacing: bool = True) -> float:
    return max(hausdorff_directed(a, b, use_spacing), hausdorff_directed(b, a, use_spacing))


# --- Reliability ---

class ICCResult(NamedTuple):
    icc: float
    ci_low: float
    ci_high: float


ICC_FORMS = ("2,1", "3,1")


def icc_2_1(ratings: Sequence[Sequence[float]], form: str = "2,1", alpha: float = 0.05) -> ICCResult:
    """
    Shrout-Fleiss single-rater ICC from two-way ANOVA mean squares, with its
    F-based confidence interval. Rows are subjects, columns raters.

    "2,1": two-way random effects, absolute agreement.
    "3,1": two-way mixed effects, consistency.
    """
    if form not in ICC_FORMS:
        raise DomainError(f"Unknown ICC form {form!r}, expected one of {ICC_FORMS}")
    y = np.asarray(ratings, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] < 3 or y.shape[1] < 2:
        raise DomainError(f"ICC needs >= 3 subjects and >= 2 raters, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise DomainError("ICC ratings must be finite")
    n, k = y.shape

    grand = y.mean()
    ss_total = float(np.sum((y - grand) ** 2))
    if ss_total == 0:
        return ICCResult(1.0, 1.0, 1.0)
    ss_rows = k * float(np.sum((y.mean(axis=1) - grand) ** 2))
    ss_cols = n * float(np.sum((y.mean(axis=0) - grand) ** 2))
    residuals = y - y.mean(axis=1, keepdims=True) - y.mean(axis=0, keepdims=True) + grand
    ss_error = float(np.sum(residuals ** 2))

    df_rows, df_cols, df_error = n - 1, k - 1, (n - 1) * (k - 1)
    msr, msc, mse = ss_rows / df_rows, ss_cols / df_cols, ss_error / df_error

    if form == "3,1":
        if mse == 0:
            return ICCResult(1.0, 1.0, 1.0)
        icc = (msr - mse) / (msr + (k - 1) * mse)
        f_value = msr / mse
        f_low = f_value / stats.f.ppf(1 - alpha / 2, df_rows, df_error)
        f_high = f_value * stats.f.ppf(1 - alpha / 2, df_error, df_rows)
        return ICCResult(float(icc), float((f_low - 1) / (f_low + k - 1)), float((f_high - 1) / (f_high + k - 1)))

    if mse == 0 and msc == 0:
        return ICCResult(1.0, 1.0, 1.0)
    icc = (msr - mse) / (msr + (k - 1) * mse + k * (msc - mse) / n)
    if icc >= 1.0:
        return ICCResult(1.0, 1.0, 1.0)

    a = k * icc / (n * (1 - icc))
    b = 1 + k * icc * (n - 1) / (n * (1 - icc))
    v = (a * msc + b * mse) ** 2 / ((a * msc) ** 2 / df_cols + (b * mse) ** 2 / df_error)
    f_upper = stats.f.ppf(1 - alpha / 2, df_rows, v)
    f_lower = stats.f.ppf(1 - alpha / 2, v, df_rows)
    spread = k * msc + (k * n - k - n) * mse
    low = n * (msr - f_upper * mse) / (f_upper * spread + n * msr)
    high = n * (f_lower * msr - mse) / (spread + n * f_lower * msr)
    return ICCResult(float(icc), float(low), float(high))
