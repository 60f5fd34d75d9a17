# pipeline/noise.py

"""
MRI Noise Synthesis
-------------------
Corrupts magnitude images with Gaussian, Rician or Rayleigh noise at a target
SNR, for robustness testing of segmentations and EF estimates.

SNR convention: mean intensity over a foreground mask divided by the noise
standard deviation sigma.

Random numbers come from numpy's PCG64 bit generator seeded with the 64-bit
NoiseSpec seed; normal variates use numpy's ziggurat sampler. In mixed mode stack i
draws from its own PCG64 stream seeded with (seed XOR i), and the per-stack
model choices are drawn from a PCG64 stream seeded with the seed itself.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from pipeline.errors import DimensionMismatchError, DomainError, EmptyMaskError
from pipeline.volgrid import BinaryMask, IntensityVolume, StackSeries

logger = logging.getLogger("ventriq.noise")

MIXED_DEFAULT_SNR = 20.0
DEFAULT_SNR = 30.0
_SEED_MASK = (1 << 64) - 1


class NoiseModel(str, Enum):
    GAUSSIAN = "gaussian"
    RICIAN = "rician"
    RAYLEIGH = "rayleigh"
    MIXED = "mixed"


# Models mixed mode picks from, in draw order.
MIXABLE_MODELS = (NoiseModel.GAUSSIAN, NoiseModel.RICIAN, NoiseModel.RAYLEIGH)


@dataclass(frozen=True)
class NoiseSpec:
    model: NoiseModel = NoiseModel.RICIAN
    snr: float = DEFAULT_SNR
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "model", NoiseModel(self.model))
        if not self.snr > 0:
            raise DomainError(f"SNR must be positive, got {self.snr}")
        if not 0 <= int(self.seed) <= _SEED_MASK:
            raise DomainError(f"Seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass(frozen=True)
class MixedNoiseResult:
    series: StackSeries
    models: Tuple[NoiseModel, ...]
    sigmas: Tuple[float, ...]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & _SEED_MASK))


def sigma_for_snr(vol: IntensityVolume, fg: BinaryMask, snr: float) -> float:
    """sigma = mean(vol over fg) / snr."""
    if vol.dims != fg.dims:
        raise DimensionMismatchError(f"Intensity dims {vol.dims} differ from mask dims {fg.dims}")
    if fg.is_empty():
        raise EmptyMaskError("SNR needs a non-empty foreground mask")
    if not snr > 0:
        raise DomainError(f"SNR must be positive, got {snr}")
    return float(vol.voxels[fg.foreground].mean()) / snr


def corrupt(vol: IntensityVolume, spec: NoiseSpec, sigma: float) -> IntensityVolume:
    """
    Gaussian: max(0, v + n); Rician: sqrt((v + n1)^2 + n2^2); Rayleigh: v + r with
    r Rayleigh-distributed with scale sigma. n, n1, n2 ~ N(0, sigma^2).
    """
    if sigma < 0:
        raise DomainError(f"Noise sigma must be >= 0, got {sigma}")
    if spec.model is NoiseModel.MIXED:
        raise DomainError("Mixed noise is applied per stack, use corrupt_mixed")
    if sigma == 0:
        return IntensityVolume(vol.voxels, vol.spacing)

    rng = make_rng(spec.seed)
    v = vol.voxels
    if spec.model is NoiseModel.GAUSSIAN:
        out = np.maximum(0.0, v + rng.normal(0.0, sigma, v.shape))
    elif spec.model is NoiseModel.RICIAN:
        n1, n2 = rng.normal(0.0, sigma, (2,) + v.shape)
        out = np.sqrt((v + n1) ** 2 + n2 ** 2)
    else:
        out = v + rng.rayleigh(sigma, v.shape)
    return IntensityVolume(out, vol.spacing)


def corrupt_mixed(
    series: StackSeries,
    snr: float = MIXED_DEFAULT_SNR,
    seed: int = 0,
    max_workers: int = 1,
) -> MixedNoiseResult:
    """
    Draw one of Gaussian/Rician/Rayleigh per stack and corrupt it at `snr`, with
    sigma taken from the stack's own mask as foreground. Parallel execution gives
    the same result as sequential.
    """
    if not series.has_intensities:
        raise DomainError("Mixed noise needs intensity volumes for every phase")
    choices = make_rng(seed).integers(0, len(MIXABLE_MODELS), size=len(series))
    models = tuple(MIXABLE_MODELS[int(c)] for c in choices)

    def _one(i: int) -> Tuple[IntensityVolume, float]:
        phase = series.phases[i]
        sigma = sigma_for_snr(phase.intensity, phase.mask, snr)
        spec = NoiseSpec(models[i], snr, (int(seed) ^ i) & _SEED_MASK)
        return corrupt(phase.intensity, spec, sigma), sigma

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as executor:
        results = list(executor.map(_one, range(len(series))))

    for phase, model, (_, sigma) in zip(series.phases, models, results):
        logger.debug(f"Phase {phase.index}: {model.value} noise, sigma={sigma:.4g}")
    corrupted = series.with_intensities([vol for vol, _ in results])
    return MixedNoiseResult(corrupted, models, tuple(s for _, s in results))


def corrupt_series(
    series: StackSeries,
    spec: NoiseSpec,
    max_workers: int = 1,
    sigma: Optional[float] = None,
) -> MixedNoiseResult:
    """Apply one noise model to every stack; mixed specs dispatch to corrupt_mixed."""
    if spec.model is NoiseModel.MIXED:
        return corrupt_mixed(series, spec.snr, spec.seed, max_workers)
    if not series.has_intensities:
        raise DomainError("Noise injection needs intensity volumes for every phase")

    def _one(i: int) -> Tuple[IntensityVolume, float]:
        phase = series.phases[i]
        s = sigma if sigma is not None else sigma_for_snr(phase.intensity, phase.mask, spec.snr)
        sub = NoiseSpec(spec.model, spec.snr, (int(spec.seed) ^ i) & _SEED_MASK)
        return corrupt(phase.intensity, sub, s), s

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as executor:
        results = list(executor.map(_one, range(len(series))))
    corrupted = series.with_intensities([vol for vol, _ in results])
    return MixedNoiseResult(corrupted, (spec.model,) * len(series), tuple(s for _, s in results))
