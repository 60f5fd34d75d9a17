# tests/test_noise.py

import math

import numpy as np
import pytest

from pipeline.errors import DomainError, EmptyMaskError
from pipeline.noise import (
    MIXABLE_MODELS, MixedNoiseResult, NoiseModel, NoiseSpec, corrupt, corrupt_mixed,
    corrupt_series, make_rng, sigma_for_snr,
)
from pipeline.volgrid import BinaryMask, IntensityVolume, Phase, StackSeries

SHAPE = (10, 100, 100)


def _constant(value: float, shape=SHAPE) -> IntensityVolume:
    return IntensityVolume(np.full(shape, value))


def _series(n: int = 3) -> StackSeries:
    rng = np.random.default_rng(5)
    mask = np.zeros((4, 8, 8), dtype=np.uint8)
    mask[1:3, 2:6, 2:6] = 1
    phases = []
    for i in range(n):
        vol = IntensityVolume(rng.uniform(0, 50, mask.shape) + 300 * mask)
        phases.append(Phase(i, BinaryMask(mask), vol))
    return StackSeries(tuple(phases))


def test_sigma_for_snr_examples():
    vol = _constant(300.0, (2, 2, 2))
    fg = BinaryMask(np.ones((2, 2, 2)))
    assert sigma_for_snr(vol, fg, 30) == pytest.approx(10.0)
    assert sigma_for_snr(vol, fg, 20) == pytest.approx(15.0)
    assert sigma_for_snr(_constant(7.0, (2, 2, 2)), fg, 3.5) == pytest.approx(2.0)


def test_sigma_for_snr_errors():
    vol = _constant(1.0, (2, 2, 2))
    with pytest.raises(EmptyMaskError):
        sigma_for_snr(vol, BinaryMask(np.zeros((2, 2, 2))), 30)
    with pytest.raises(DomainError):
        sigma_for_snr(vol, BinaryMask(np.ones((2, 2, 2))), 0)


@pytest.mark.parametrize("model", MIXABLE_MODELS)
def test_zero_sigma_is_identity(model):
    vol = IntensityVolume(np.arange(8, dtype=float).reshape(2, 2, 2))
    assert corrupt(vol, NoiseSpec(model, seed=3), 0.0) == vol


def test_rician_on_zero_signal_follows_rayleigh_mean():
    out = corrupt(_constant(0.0), NoiseSpec(NoiseModel.RICIAN, seed=11), 10.0)
    assert out.voxels.mean() == pytest.approx(10.0 * math.sqrt(math.pi / 2), rel=0.02)


def test_gaussian_moments_on_bright_signal():
    out = corrupt(_constant(1000.0), NoiseSpec(NoiseModel.GAUSSIAN, seed=12), 10.0)
    assert out.voxels.mean() == pytest.approx(1000.0, rel=0.005)
    assert out.voxels.std() == pytest.approx(10.0, rel=0.03)


def test_rayleigh_adds_positive_bias():
    out = corrupt(_constant(100.0), NoiseSpec(NoiseModel.RAYLEIGH, seed=13), 2.0)
    assert out.voxels.min() >= 100.0
    assert out.voxels.mean() - 100.0 == pytest.approx(2.0 * math.sqrt(math.pi / 2), rel=0.02)


def test_rician_converges_to_gaussian_at_high_snr():
    vol = _constant(1e4)
    rician = corrupt(vol, NoiseSpec(NoiseModel.RICIAN, seed=21), 1.0)
    # Same stream: the Gaussian draw equals the Rician in-phase component.
    gaussian = corrupt(vol, NoiseSpec(NoiseModel.GAUSSIAN, seed=21), 1.0)
    assert abs((rician.voxels - gaussian.voxels).mean()) < 0.01


def test_corrupt_is_deterministic():
    vol = _constant(50.0, (3, 4, 5))
    spec = NoiseSpec(NoiseModel.RICIAN, seed=99)
    assert corrupt(vol, spec, 4.0) == corrupt(vol, spec, 4.0)
    assert corrupt(vol, spec, 4.0) != corrupt(vol, NoiseSpec(NoiseModel.RICIAN, seed=100), 4.0)


def test_corrupt_rejects_mixed_and_negative_sigma():
    vol = _constant(1.0, (2, 2, 2))
    with pytest.raises(DomainError):
        corrupt(vol, NoiseSpec(NoiseModel.MIXED), 1.0)
    with pytest.raises(DomainError):
        corrupt(vol, NoiseSpec(), -1.0)


def test_noise_spec_validation():
    with pytest.raises(DomainError):
        NoiseSpec(snr=0)
    with pytest.raises(DomainError):
        NoiseSpec(seed=-1)
    assert NoiseSpec("gaussian").model is NoiseModel.GAUSSIAN


def test_mixed_model_choices_follow_reference_sequence():
    seed = 2024
    result = corrupt_mixed(_series(3), seed=seed)
    expected = make_rng(seed).integers(0, 3, size=3)
    assert result.models == tuple(MIXABLE_MODELS[int(c)] for c in expected)


def test_mixed_is_deterministic_and_thread_independent():
    series = _series(5)
    a = corrupt_mixed(series, seed=7)
    b = corrupt_mixed(series, seed=7, max_workers=4)
    assert a.models == b.models and a.sigmas == b.sigmas
    for pa, pb in zip(a.series.phases, b.series.phases):
        assert pa.intensity == pb.intensity


def test_vanishing_sigma_limit():
    series = _series(3)
    result = corrupt_mixed(series, snr=1e9, seed=1)
    for before, after in zip(series.phases, result.series.phases):
        assert np.allclose(after.intensity.voxels, before.intensity.voxels, atol=1e-3, rtol=0)


def test_corrupt_series_single_model():
    series = _series(3)
    result = corrupt_series(series, NoiseSpec(NoiseModel.GAUSSIAN, snr=30, seed=4))
    assert isinstance(result, MixedNoiseResult)
    assert result.models == (NoiseModel.GAUSSIAN,) * 3
    # Each stack draws from its own stream.
    noise = [p.intensity.voxels - q.intensity.voxels for p, q in zip(result.series.phases, series.phases)]
    assert not np.array_equal(noise[0], noise[1])
    fixed = corrupt_series(series, NoiseSpec(NoiseModel.GAUSSIAN, seed=4), sigma=0.0)
    assert fixed.sigmas == (0.0, 0.0, 0.0)


def test_corrupt_series_needs_intensities():
    mask = BinaryMask(np.ones((2, 2, 2)))
    bare = StackSeries((Phase(0, mask), Phase(1, mask)))
    with pytest.raises(DomainError):
        corrupt_series(bare, NoiseSpec())
