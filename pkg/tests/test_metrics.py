#!/usr/bin/env python
"""Tests for metrics.py
"""
import math
import numpy as np
import pytest
from patchsegpy.metrics import *
from patchsegpy.data import LabelVolume
from patchsegpy.tools import DimensionError, UsageError

NEIGHBOURS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1),
              (0, 0, -1))


def _mask(array, spacing=(1.0, 1.0, 1.0)):
    return RegionMask(np.asarray(array, dtype=bool), 'WT', spacing)


def _loop_boundary(mask):
    points = []
    for voxel in zip(*np.nonzero(mask)):
        for step in NEIGHBOURS:
            neighbour = tuple(v + s for v, s in zip(voxel, step))
            inside = all(0 <= n < extent
                         for n, extent in zip(neighbour, mask.shape))
            if not inside or not mask[neighbour]:
                points.append(voxel)
                break
    return np.array(points, dtype=np.float64)


def _brute_hd95(pred, truth, spacing):
    a = _loop_boundary(pred) * spacing
    b = _loop_boundary(truth) * spacing
    distances = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))

    def _rank(values):
        ordered = sorted(values)
        return ordered[math.ceil(95 * len(ordered) / 100) - 1]

    return max(_rank(distances.min(axis=1)), _rank(distances.min(axis=0)))


def _brute_hausdorff(pred, truth):
    a, b = _loop_boundary(pred), _loop_boundary(truth)
    distances = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    return max(distances.min(axis=1).max(), distances.min(axis=0).max())


def test_ratio_formulas():
    counts = (2, 1, 1, 0)
    assert dsc(counts) == pytest.approx(2 / 3)
    assert sensitivity(counts) == pytest.approx(2 / 3)
    assert ppv(counts) == pytest.approx(2 / 3)
    assert specificity(counts) == 0.0
    assert dsc((5, 0, 0, 10)) == 1.0
    assert specificity((5, 0, 0, 10)) == 1.0


def test_undefined_ratios():
    empty = (0, 0, 0, 8)
    assert dsc(empty) is None
    assert sensitivity(empty) is None
    assert ppv(empty) is None
    assert specificity((3, 0, 0, 0)) is None


def test_confusion_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pred = rng.random((8, 8, 8)) < 0.4
        truth = rng.random((8, 8, 8)) < 0.4
        expected = [0, 0, 0, 0]
        for voxel in np.ndindex(8, 8, 8):
            p, t = pred[voxel], truth[voxel]
            expected[0 if p and t else 1 if p else 2 if t else 3] += 1
        counts = confusion(_mask(pred), _mask(truth))
        assert list(counts) == expected
        assert sum(counts) == 512


def test_confusion_shape_mismatch():
    with pytest.raises(DimensionError):
        confusion(_mask(np.zeros((2, 2, 2))), _mask(np.zeros((2, 2, 3))))


def test_region_masks_nest():
    labels = LabelVolume(np.random.default_rng(1).integers(0, 4, (6, 6, 6)))
    whole = region_mask(labels, 'WT').mask
    core = region_mask(labels, 'TC').mask
    enhancing = region_mask(labels, 'ET').mask
    assert np.all(whole >= core) and np.all(core >= enhancing)
    np.testing.assert_array_equal(enhancing, labels.labels == 3)
    with pytest.raises(UsageError):
        region_mask(labels, 'XX')


def test_boundary_faces():
    mask = np.zeros((5, 5, 5), dtype=bool)
    mask[1:4, 1:4, 1:4] = True
    edge = boundary(mask)
    assert np.count_nonzero(edge) == 26
    assert not edge[2, 2, 2]
    full = np.ones((3, 3, 3), dtype=bool)
    assert np.count_nonzero(boundary(full)) == 26


def test_hd95_identical_and_empty():
    mask = np.zeros((6, 6, 6), dtype=bool)
    mask[1:4, 2:5, 2:4] = True
    assert hd95(_mask(mask), _mask(mask)) == 0.0
    empty = np.zeros_like(mask)
    assert hd95(_mask(empty), _mask(empty)) == 0.0
    assert hd95(_mask(mask), _mask(empty)) is None
    assert hd95(_mask(empty), _mask(mask)) is None


def test_hd95_single_voxels():
    pred = np.zeros((8, 8, 8), dtype=bool)
    truth = np.zeros((8, 8, 8), dtype=bool)
    pred[2, 2, 2] = True
    truth[2, 2, 5] = True
    assert hd95(_mask(pred), _mask(truth)) == pytest.approx(3.0)
    scaled = hd95(_mask(pred, (1, 1, 2)), _mask(truth, (1, 1, 2)))
    assert scaled == pytest.approx(6.0)


def test_hd95_spacing_mismatch():
    mask = np.ones((2, 2, 2))
    with pytest.raises(DimensionError):
        hd95(_mask(mask, (1, 1, 1)), _mask(mask, (1, 1, 2)))


def test_hd95_brute_force():
    rng = np.random.default_rng(2)
    spacing = np.array([1.0, 0.5, 2.0])
    for _ in range(20):
        pred = rng.random((12, 12, 12)) < 0.25
        truth = rng.random((12, 12, 12)) < 0.25
        value = hd95(_mask(pred, tuple(spacing)), _mask(truth, tuple(spacing)))
        assert abs(value - _brute_hd95(pred, truth, spacing)) < 1e-9


def test_hd95_symmetric_and_bounded():
    rng = np.random.default_rng(3)
    for _ in range(5):
        pred = np.zeros((12, 12, 12), dtype=bool)
        truth = np.zeros((12, 12, 12), dtype=bool)
        corner = rng.integers(0, 6, 3)
        pred[tuple(slice(c, c + 5) for c in corner)] = True
        corner = rng.integers(0, 6, 3)
        truth[tuple(slice(c, c + 4) for c in corner)] = True
        forward = hd95(_mask(pred), _mask(truth))
        assert forward == hd95(_mask(truth), _mask(pred))
        assert 0 <= forward <= _brute_hausdorff(pred, truth) + 1e-12


def test_evaluate_perfect_and_empty():
    labels = LabelVolume(np.random.default_rng(4).integers(0, 4, (8, 8, 8)))
    report = evaluate(labels, labels, subject_id='s')
    for kind in REGIONS:
        assert report.regions[kind]['dsc'] == 1.0
        assert report.regions[kind]['hd95_mm'] == 0.0
    healthy = LabelVolume(np.zeros((8, 8, 8)))
    report = evaluate(healthy, healthy)
    for kind in REGIONS:
        assert report.regions[kind]['dsc'] is None
        assert report.regions[kind]['specificity'] == 1.0
        assert report.regions[kind]['hd95_mm'] == 0.0
    with pytest.raises(DimensionError):
        evaluate(healthy, LabelVolume(np.zeros((8, 8, 9))))


def test_report_dict():
    labels = LabelVolume(np.random.default_rng(5).integers(0, 4, (6, 6, 6)))
    row = evaluate(labels, labels, subject_id='s5').to_dict()
    assert set(row) == {'subject_id', 'regions', 'voxels', 'runtime_s'}
    assert set(row['regions']) == set(REGIONS)
    assert set(row['regions']['ET']) == set(METRICS)
    assert row['voxels']['total'] == 216


def test_aggregate():
    labels = LabelVolume(np.random.default_rng(6).integers(0, 4, (6, 6, 6)))
    reports = [evaluate(labels, labels) for _ in range(3)]
    summary = aggregate(reports)
    assert summary['WT']['dsc']['mean'] == 1.0
    assert summary['WT']['dsc']['std'] == 0.0
    assert summary['WT']['dsc']['n'] == 3
    healthy = LabelVolume(np.zeros((6, 6, 6)))
    mixed = aggregate(reports + [evaluate(healthy, healthy).to_dict()])
    assert mixed['ET']['dsc']['n'] == 3
    empty = aggregate([evaluate(healthy, healthy)])
    assert empty['TC']['dsc'] == {'mean': None, 'std': None, 'median': None,
                                  'q25': None, 'q75': None, 'n': 0}
