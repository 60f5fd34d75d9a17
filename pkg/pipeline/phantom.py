# pipeline/phantom.py

"""
Synthetic Beating-LV Phantom
----------------------------
Generates a deterministic cardiac cycle of left-ventricle masks and intensity
stacks with known ground truth, used in place of acquired data for end-to-end
checks of the EF pipeline.

The cavity is an ellipsoid of revolution with its long axis along z, centred
on the middle slice. The long axis keeps its end-diastolic length (1.8 times
the end-diastolic in-plane semi-axis) and only the in-plane semi-axes contract,
so the middle-slice area is proportional to the cavity volume. Its per-phase
target volume follows a raised-cosine waveform with the maximum at phase 0
(end-diastole) and the minimum at round(P * es_phase_fraction) (end-systole).
Ground-truth volumes and EF are taken from the voxelized masks, which are
nested: a larger cavity contains every smaller one, and the middle-slice area
is strictly monotone in volume.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from pipeline.cycle import select_mid_slice
from pipeline.errors import DomainError, PhantomBoundsError
from pipeline.morph import StructuringElement, dilate
from pipeline.noise import NoiseModel, NoiseSpec, corrupt_series, make_rng
from pipeline.volgrid import (
    STANDARD_DIMS, BinaryMask, IntensityVolume, Phase, Spacing, StackSeries, mask_volume,
    slice_areas,
)

logger = logging.getLogger("ventriq.phantom")

# End-diastolic ratio of the long semi-axis to the in-plane semi-axes.
LONG_AXIS_RATIO = 1.8
# Largest in-plane sub-voxel offset of the cavity centre, per axis.
CENTRE_JITTER = 0.2
TYPICAL_PHASES = (11, 13)


@dataclass(frozen=True)
class PhantomSpec:
    dims: Tuple[int, int, int] = STANDARD_DIMS
    spacing: Spacing = field(default_factory=Spacing)
    n_phases: int = 13
    v_ed_target: float = 500.0
    ef_target: float = 55.0
    es_phase_fraction: float = 0.4
    wall_thickness: int = 3
    # (cavity, myocardium, background)
    intensities: Tuple[float, float, float] = (300.0, 150.0, 30.0)
    seed: int = 42
    noise_snr: Optional[float] = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise DomainError(f"Phantom dims must be three positive integers, got {self.dims}")
        object.__setattr__(self, "dims", dims)
        if self.n_phases < 2:
            raise DomainError(f"A phantom cycle needs at least 2 phases, got {self.n_phases}")
        if not 0 < self.ef_target < 100:
            raise DomainError(f"ef_target must lie in (0, 100), got {self.ef_target}")
        if not self.v_ed_target > 0:
            raise DomainError(f"v_ed_target must be positive, got {self.v_ed_target}")
        if not 0 < self.es_phase_fraction < 1:
            raise DomainError(f"es_phase_fraction must lie in (0, 1), got {self.es_phase_fraction}")
        if not 0 < self.es_phase < self.n_phases:
            raise DomainError(f"ES phase {self.es_phase} does not fall strictly inside a "
                              f"{self.n_phases}-phase cycle")
        if self.wall_thickness < 0:
            raise DomainError(f"wall_thickness must be >= 0, got {self.wall_thickness}")
        if len(self.intensities) != 3 or min(self.intensities) < 0:
            raise DomainError(f"intensities must be three non-negative values, got {self.intensities}")
        if self.noise_snr is not None and not self.noise_snr > 0:
            raise DomainError(f"noise_snr must be positive, got {self.noise_snr}")

    @property
    def es_phase(self) -> int:
        return int(np.floor(self.n_phases * self.es_phase_fraction + 0.5))

    @property
    def v_es_target(self) -> float:
        return self.v_ed_target * (1.0 - self.ef_target / 100.0)


@dataclass(frozen=True)
class GroundTruth:
    volumes: Tuple[float, ...]
    ed_phase: int
    es_phase: int
    target_volumes: Tuple[float, ...] = ()

    @property
    def ef_percent(self) -> float:
        return ground_truth_ef(self)

    def to_dict(self) -> dict:
        return {
            "ef_percent": self.ef_percent,
            "ed_phase": self.ed_phase,
            "es_phase": self.es_phase,
            "v_ed_mm3": self.volumes[self.ed_phase],
            "v_es_mm3": self.volumes[self.es_phase],
            "volumes_mm3": list(self.volumes),
            "target_volumes_mm3": list(self.target_volumes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        return cls(
            volumes=tuple(float(v) for v in data["volumes_mm3"]),
            ed_phase=int(data["ed_phase"]),
            es_phase=int(data["es_phase"]),
            target_volumes=tuple(float(v) for v in data.get("target_volumes_mm3", ())),
        )


def ground_truth_ef(gt: GroundTruth) -> float:
    v_ed, v_es = gt.volumes[gt.ed_phase], gt.volumes[gt.es_phase]
    return 100.0 * (v_ed - v_es) / v_ed


def target_volume(spec: PhantomSpec, t: int) -> float:
    """
    Raised-cosine volume curve: falls from V_ED at t = 0 to V_ES at the ES phase,
    then rises back towards V_ED over the rest of the cycle.
    """
    stroke = spec.v_ed_target - spec.v_es_target
    t_es, period = spec.es_phase, spec.n_phases
    if t <= t_es:
        weight = (1.0 + np.cos(np.pi * t / t_es)) / 2.0
    else:
        weight = (1.0 - np.cos(np.pi * (t - t_es) / (period - t_es))) / 2.0
    return float(spec.v_es_target + stroke * weight)


def long_axis_semi(spec: PhantomSpec) -> float:
    """Long semi-axis in mm, fixed over the cycle at its end-diastolic length."""
    in_plane = (3.0 * spec.v_ed_target / (4.0 * np.pi * LONG_AXIS_RATIO)) ** (1.0 / 3.0)
    return LONG_AXIS_RATIO * in_plane


def _critical_radius(spec: PhantomSpec, centre: np.ndarray) -> np.ndarray:
    """In-plane semi-axis (mm) at which each voxel centre joins the cavity; inf beyond the long axis."""
    dz, dy, dx = spec.spacing.zyx()
    z, y, x = (np.arange(n, dtype=np.float64) - c for n, c in zip(spec.dims, centre))
    zz, yy, xx = np.meshgrid(z * dz, y * dy, x * dx, indexing="ij")
    height = 1.0 - (zz / long_axis_semi(spec)) ** 2
    inside = height > 0
    return np.where(inside, np.sqrt((yy ** 2 + xx ** 2) / np.where(inside, height, 1.0)), np.inf)


def _choose_counts(targets: np.ndarray, counts: np.ndarray, middle_cum: np.ndarray) -> list:
    """
    Voxel count per phase: the achievable count nearest to the target, raised
    where needed so that every larger target also adds middle-slice voxels.
    """
    chosen = [int(counts[int(np.argmin(np.abs(counts - t)))]) for t in targets]
    previous = None
    for i in sorted(range(len(targets)), key=lambda k: targets[k]):
        if previous is not None:
            prev_target, prev_count = previous
            if targets[i] == prev_target:
                chosen[i] = prev_count
            elif middle_cum[chosen[i] - 1] <= middle_cum[prev_count - 1]:
                larger = counts[middle_cum[counts - 1] > middle_cum[prev_count - 1]]
                if larger.size == 0:
                    raise PhantomBoundsError("The grid cannot hold a cavity large enough for every phase")
                chosen[i] = int(larger[0])
        previous = (targets[i], chosen[i])
    return chosen


def _touches_boundary(mask: np.ndarray) -> bool:
    return bool(mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any()
                or mask[:, :, 0].any() or mask[:, :, -1].any())


def _paint(cavity: np.ndarray, spec: PhantomSpec) -> IntensityVolume:
    cavity_value, wall_value, background_value = spec.intensities
    cavity_mask = BinaryMask(cavity, spec.spacing)
    outer = dilate(cavity_mask, StructuringElement.CROSS6, spec.wall_thickness) if spec.wall_thickness else cavity_mask
    values = np.full(spec.dims, background_value, dtype=np.float64)
    values[outer.foreground] = wall_value
    values[cavity] = cavity_value
    return IntensityVolume(values, spec.spacing)


def _check_mid_slice(series: StackSeries, volumes: list) -> None:
    k = select_mid_slice(series)
    areas = [float(slice_areas(m)[k]) for m in series.masks]
    ranked = sorted(zip(volumes, areas))
    for (v_low, a_low), (v_high, a_high) in zip(ranked, ranked[1:]):
        if v_high > v_low and not a_high > a_low:
            raise DomainError(f"Mid-slice {k} area is not strictly monotone in volume "
                              f"({a_low} mm^2 at {v_low} mm^3, {a_high} mm^2 at {v_high} mm^3)")


def generate(spec: PhantomSpec) -> Tuple[StackSeries, GroundTruth]:
    if not TYPICAL_PHASES[0] <= spec.n_phases <= TYPICAL_PHASES[1]:
        logger.warning(f"Phantom with {spec.n_phases} phases; acquired cycles have "
                       f"{TYPICAL_PHASES[0]}-{TYPICAL_PHASES[1]}")

    middle = (spec.dims[0] - 1) // 2
    jitter = make_rng(spec.seed).uniform(-CENTRE_JITTER, CENTRE_JITTER, 2)
    centre = np.array([middle, (spec.dims[1] - 1) / 2.0 + jitter[0], (spec.dims[2] - 1) / 2.0 + jitter[1]])
    critical = _critical_radius(spec, centre)
    order = np.argsort(critical, axis=None, kind="stable")
    ranked = critical.ravel()[order]
    finite = int(np.count_nonzero(np.isfinite(ranked)))
    if finite == 0:
        raise PhantomBoundsError(f"No voxel of the {spec.dims} grid lies inside the cavity's long axis")
    counts = np.append(np.flatnonzero(np.diff(ranked[:finite]) > 0) + 1, finite)
    middle_cum = np.cumsum(np.unravel_index(order[:finite], spec.dims)[0] == middle)

    targets = [target_volume(spec, t) for t in range(spec.n_phases)]
    chosen = _choose_counts(np.asarray(targets) / spec.spacing.voxel_volume, counts, middle_cum)

    phases, volumes = [], []
    for t, (target, n) in enumerate(zip(targets, chosen)):
        cavity = critical <= ranked[n - 1]
        if _touches_boundary(cavity):
            raise PhantomBoundsError(
                f"Phase {t}: a {target:.1f} mm^3 cavity does not fit inside a {spec.dims} grid")
        mask = BinaryMask(cavity, spec.spacing)
        phases.append(Phase(t, mask, _paint(cavity, spec)))
        volumes.append(mask_volume(mask))

    ed_phase, es_phase = 0, spec.es_phase
    others = [v for i, v in enumerate(volumes) if i != ed_phase]
    if max(others) >= volumes[ed_phase] or min(v for i, v in enumerate(volumes) if i != es_phase) <= volumes[es_phase]:
        raise DomainError(f"Voxelized volume curve has no unique maximum at phase {ed_phase} and "
                          f"minimum at phase {es_phase}; increase ef_target or the grid resolution")

    series = StackSeries(tuple(phases))
    _check_mid_slice(series, volumes)
    if spec.noise_snr is not None:
        series = corrupt_series(series, NoiseSpec(NoiseModel.RICIAN, spec.noise_snr, spec.seed)).series

    gt = GroundTruth(tuple(volumes), ed_phase, es_phase, tuple(targets))
    logger.info(f"Generated {spec.n_phases}-phase phantom: V_ED={volumes[ed_phase]:.2f} mm^3, "
                f"V_ES={volumes[es_phase]:.2f} mm^3, EF={gt.ef_percent:.3f}%")
    return series, gt
