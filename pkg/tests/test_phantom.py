# tests/test_phantom.py

import logging

import numpy as np
import pytest
from scipy import ndimage

from pipeline.cycle import MetricKind, build_series, select_mid_slice
from pipeline.errors import DomainError, PhantomBoundsError
from pipeline.morph import StructuringElement, fill_holes
from pipeline.phantom import GroundTruth, PhantomSpec, generate, ground_truth_ef, long_axis_semi, target_volume
from pipeline.volgrid import STANDARD_DIMS, mask_volume, slice_areas


def test_default_phantom_shape_and_truth(phantom):
    series, gt = phantom
    assert len(series) == 13
    assert series.dims == STANDARD_DIMS
    assert series.has_intensities
    assert (gt.ed_phase, gt.es_phase) == (0, 5)
    assert gt.volumes == tuple(mask_volume(m) for m in series.masks)


def test_voxelized_volumes_track_targets(phantom):
    series, gt = phantom
    for volume, target in zip(gt.volumes, gt.target_volumes):
        assert abs(volume - target) / target < 0.05
    # the smallest target is never raised
    assert gt.volumes[gt.es_phase] == pytest.approx(225.0, abs=series.spacing.voxel_volume)
    assert gt.volumes[0] == pytest.approx(500.0, rel=0.01)
    assert gt.ef_percent == pytest.approx(55.0, abs=1.0)


def test_masks_are_nested_in_volume_order(phantom):
    series, gt = phantom
    order = np.argsort(gt.volumes, kind="stable")
    for small, large in zip(order, order[1:]):
        inner, outer = series.masks[small].foreground, series.masks[large].foreground
        assert not np.any(inner & ~outer)


def test_mid_slice_is_the_middle_slice_and_strictly_monotone(phantom):
    series, gt = phantom
    k = select_mid_slice(series)
    assert k == (series.dims[0] - 1) // 2
    areas = [float(slice_areas(m)[k]) for m in series.masks]
    ranked = sorted(zip(gt.volumes, areas))
    for (v_low, a_low), (v_high, a_high) in zip(ranked, ranked[1:]):
        assert v_high > v_low
        assert a_high > a_low


@pytest.mark.parametrize("n_phases,ef_target,seed", [(11, 40.0, 1), (12, 52.0, 7), (13, 67.0, 19)])
def test_slice_area_tracks_volume_across_specs(n_phases, ef_target, seed):
    series, gt = generate(PhantomSpec(n_phases=n_phases, ef_target=ef_target, seed=seed))
    volumes = np.asarray(gt.volumes)
    areas = build_series(series, MetricKind.MID_SLICE_AREA).values
    order = np.argsort(volumes, kind="stable")
    assert np.all(np.diff(areas[order])[np.diff(volumes[order]) > 0] > 0)
    assert int(np.argmin(areas)) == gt.es_phase and int(np.argmax(areas)) == gt.ed_phase


def test_long_axis_is_fixed_by_the_end_diastolic_volume():
    spec = PhantomSpec()
    in_plane = long_axis_semi(spec) / 1.8
    assert 4.0 / 3.0 * np.pi * in_plane ** 2 * long_axis_semi(spec) == pytest.approx(spec.v_ed_target)
    assert long_axis_semi(PhantomSpec(ef_target=30.0)) == long_axis_semi(spec)


def test_ed_and_es_are_unique_extremes(phantom):
    _, gt = phantom
    volumes = np.asarray(gt.volumes)
    assert np.argmax(volumes) == 0 and np.sum(volumes == volumes.max()) == 1
    assert np.argmin(volumes) == 5 and np.sum(volumes == volumes.min()) == 1


def test_intensities_follow_the_tissue_classes(phantom):
    series, _ = phantom
    phase = series.phases[0]
    values = phase.intensity.voxels
    assert np.all(values[phase.mask.foreground] == 300.0)
    assert values[0, 0, 0] == 30.0
    assert set(np.unique(values)) == {30.0, 150.0, 300.0}


def test_generation_is_deterministic():
    spec = PhantomSpec(n_phases=11, seed=9)
    (a, gt_a), (b, gt_b) = generate(spec), generate(spec)
    assert gt_a == gt_b
    assert all(pa.mask == pb.mask and pa.intensity == pb.intensity for pa, pb in zip(a.phases, b.phases))


def test_noisy_phantom_keeps_masks(phantom):
    series, gt = phantom
    noisy, noisy_gt = generate(PhantomSpec(noise_snr=30.0))
    assert noisy_gt == gt
    assert noisy.masks == series.masks
    assert noisy.phases[0].intensity != series.phases[0].intensity


def test_target_waveform_endpoints():
    spec = PhantomSpec()
    assert target_volume(spec, 0) == pytest.approx(500.0)
    assert target_volume(spec, spec.es_phase) == pytest.approx(225.0)
    assert spec.v_es_target == pytest.approx(225.0)


def test_es_phase_rounding():
    assert PhantomSpec(n_phases=13).es_phase == 5
    assert PhantomSpec(n_phases=11).es_phase == 4


def test_spec_validation():
    with pytest.raises(DomainError):
        PhantomSpec(n_phases=1)
    with pytest.raises(DomainError):
        PhantomSpec(ef_target=0.0)
    with pytest.raises(DomainError):
        PhantomSpec(n_phases=3, es_phase_fraction=0.05)


def test_oversized_cavity_is_rejected():
    with pytest.raises(PhantomBoundsError):
        generate(PhantomSpec(dims=(6, 10, 10), v_ed_target=500.0))


def test_unusual_phase_count_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="ventriq.phantom"):
        series, _ = generate(PhantomSpec(n_phases=8))
    assert len(series) == 8
    assert "8 phases" in caplog.text


def test_ground_truth_dict_round_trip():
    gt = GroundTruth((400.0, 300.0, 200.0, 350.0), 0, 2, (400.0, 290.0, 200.0, 340.0))
    assert ground_truth_ef(gt) == 50.0
    data = gt.to_dict()
    assert data["v_ed_mm3"] == 400.0 and data["v_es_mm3"] == 200.0
    assert GroundTruth.from_dict(data) == gt


def test_ground_truth_ef_hand_ratio():
    assert ground_truth_ef(GroundTruth((480.0, 300.0, 216.0), 0, 2)) == pytest.approx(55.0)
    assert ground_truth_ef(GroundTruth((300.0, 300.0), 0, 1)) == 0.0


def test_voxelized_ef_increases_with_target():
    efs = [generate(PhantomSpec(ef_target=target, n_phases=11))[1].ef_percent for target in (40.0, 50.0, 60.0)]
    assert efs[0] < efs[1] < efs[2]
    assert all(abs(ef - target) < 3.0 for ef, target in zip(efs, (40.0, 50.0, 60.0)))


def test_cavities_are_single_hole_free_solids(phantom):
    series, gt = phantom
    for mask, target in zip(series.masks, gt.target_volumes):
        _, n = ndimage.label(mask.foreground, structure=StructuringElement.CUBE26.array())
        assert n == 1
        assert fill_holes(mask) == mask
        assert abs(mask_volume(mask) - target) / target < 0.05
