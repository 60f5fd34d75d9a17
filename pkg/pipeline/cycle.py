# pipeline/cycle.py

"""
Cardiac cycle series: one scalar per phase (cavity volume, cavity surface area,
or the area of the mid slice) built from a StackSeries. Masks are used as
given; postprocessing happens upstream.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from pipeline.errors import DomainError
from pipeline.mesh import extract_isosurface, surface_area
from pipeline.volgrid import BinaryMask, StackSeries, mask_volume, slice_areas

logger = logging.getLogger("ventriq.cycle")


class MetricKind(str, Enum):
    VOLUME = "volume"               # mm^3
    SURFACE_AREA = "surface-area"   # mm^2
    MID_SLICE_AREA = "slice-area"   # mm^2

    @property
    def unit(self) -> str:
        return "mm3" if self is MetricKind.VOLUME else "mm2"


@dataclass(frozen=True, eq=False)
class CycleSeries:
    metric: MetricKind
    phases: Tuple[int, ...]
    values: np.ndarray
    mid_slice_index: Optional[int] = None

    def __post_init__(self):
        metric = MetricKind(self.metric)
        phases = tuple(int(p) for p in self.phases)
        values = np.asarray(self.values, dtype=np.float64).copy()
        if len(phases) != len(values) or len(phases) < 2:
            raise DomainError(f"A cycle series needs >= 2 phases with one value each, "
                              f"got {len(phases)} phases and {len(values)} values")
        if not np.all(np.isfinite(values)) or values.min() < 0:
            raise DomainError("Cycle series values must be finite and >= 0")
        if (self.mid_slice_index is not None) != (metric is MetricKind.MID_SLICE_AREA):
            raise DomainError("mid_slice_index is set exactly for slice-area series")
        values.setflags(write=False)
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "values", values)

    def value_at(self, phase: int) -> float:
        try:
            return float(self.values[self.phases.index(int(phase))])
        except ValueError:
            raise DomainError(f"Phase {phase} is not part of the {self.metric.value} series") from None

    def scaled(self, factor: float, offset: float = 0.0) -> "CycleSeries":
        return CycleSeries(self.metric, self.phases, self.values * factor + offset, self.mid_slice_index)

    def to_rows(self) -> List[dict]:
        return [{"phase": p, "value": float(v)} for p, v in zip(self.phases, self.values)]


def select_mid_slice(series: StackSeries) -> int:
    """Slice whose area varies most across the cycle (population variance, lowest z on ties)."""
    areas = np.stack([slice_areas(m) for m in series.masks])
    variances = areas.var(axis=0)
    return int(np.argmax(variances))


def _surface_area_of(mask: BinaryMask) -> float:
    return surface_area(extract_isosurface(mask))


def build_series(series: StackSeries, metric: MetricKind, max_workers: int = 1) -> CycleSeries:
    metric = MetricKind(metric)
    mid_slice = None
    if metric is MetricKind.VOLUME:
        values = [mask_volume(m) for m in series.masks]
    elif metric is MetricKind.SURFACE_AREA:
        with ThreadPoolExecutor(max_workers=max(1, max_workers)) as executor:
            values = list(executor.map(_surface_area_of, series.masks))
    else:
        mid_slice = select_mid_slice(series)
        values = [float(slice_areas(m)[mid_slice]) for m in series.masks]
    logger.debug(f"Built {metric.value} series over {len(series)} phases"
                 + (f" (mid slice {mid_slice})" if mid_slice is not None else ""))
    return CycleSeries(metric, series.phase_indices, np.asarray(values), mid_slice)
