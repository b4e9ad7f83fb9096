"""### Segmentation metrics

Overlap scores and HD95 over the composite tumor regions:

- WT whole tumor, classes {1, 2, 3}
- TC tumor core, classes {2, 3}
- ET enhancing tumor, class {3}

Ratios that would be 0/0 are undefined and returned as None. Undefined
values are written as null in reports and skipped by `aggregate()`.
"""
__all__ = [
    'REGIONS',
    'METRICS',
    'RegionMask',
    'MetricsReport',
    'region_mask',
    'confusion',
    'dsc',
    'sensitivity',
    'ppv',
    'specificity',
    'boundary',
    'hd95',
    'evaluate',
    'aggregate',
    ]

from dataclasses import dataclass, field
import time
import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from .tools import DimensionError, UsageError, _shape_str

REGIONS = {
    'WT': (1, 2, 3),
    'TC': (2, 3),
    'ET': (3,),
    }
METRICS = ('dsc', 'sensitivity', 'ppv', 'specificity', 'hd95_mm')

# Face adjacency (6-neighbourhood) for boundary extraction
_FACES = ndimage.generate_binary_structure(3, 1)


@dataclass
class RegionMask:
    """Binary mask of one composite region."""
    mask: np.ndarray
    kind: str
    spacing_mm: tuple = (1.0, 1.0, 1.0)


@dataclass
class MetricsReport:
    """Per-region metrics of one subject.

    Attributes:
        regions (dict): region -> {dsc, sensitivity, ppv, specificity,
                        hd95_mm}, each a float or None.
        voxels (dict): Voxel counts (total, per region in truth and
                       prediction).
        runtime_s (float): Seconds spent evaluating.
        subject_id (str): Subject name.
    """
    regions: dict
    voxels: dict = field(default_factory=dict)
    runtime_s: float = 0.0
    subject_id: str = ''

    def to_dict(self):
        return {
            'subject_id': self.subject_id,
            'regions': self.regions,
            'voxels': self.voxels,
            'runtime_s': self.runtime_s,
            }


def region_mask(labels, kind):
    """Mask of `kind` ('WT', 'TC' or 'ET') from a LabelVolume.

    Raises:
        UsageError: For an unknown region kind.
    """
    if kind not in REGIONS:
        raise UsageError(f'unknown region {kind!r}, expected one of '
                         f'{list(REGIONS)}')
    return RegionMask(np.isin(labels.labels, REGIONS[kind]), kind,
                      labels.spacing_mm)


def _check_pair(pred, truth):
    if pred.mask.shape != truth.mask.shape:
        raise DimensionError(f'prediction {_shape_str(pred.mask.shape)} and '
                             f'truth {_shape_str(truth.mask.shape)} differ')


def confusion(pred, truth):
    """Voxel counts (TP, FP, FN, TN) of a predicted against a true mask."""
    _check_pair(pred, truth)
    predicted, actual = pred.mask.astype(bool), truth.mask.astype(bool)
    true_pos = int(np.count_nonzero(predicted & actual))
    false_pos = int(np.count_nonzero(predicted & ~actual))
    false_neg = int(np.count_nonzero(~predicted & actual))
    true_neg = int(predicted.size) - true_pos - false_pos - false_neg
    return true_pos, false_pos, false_neg, true_neg


def _ratio(numerator, denominator):
    return None if denominator == 0 else numerator / denominator


def dsc(counts):
    """Dice 2TP / (FP + 2TP + FN).

    Examples:
        ```python
        dsc((2, 1, 1, 0))  # 0.666...
        ```
    """
    true_pos, false_pos, false_neg, _ = counts
    return _ratio(2 * true_pos, false_pos + 2 * true_pos + false_neg)


def sensitivity(counts):
    """TP / (TP + FN)"""
    true_pos, _, false_neg, _ = counts
    return _ratio(true_pos, true_pos + false_neg)


def ppv(counts):
    """TP / (TP + FP)"""
    true_pos, false_pos, _, _ = counts
    return _ratio(true_pos, true_pos + false_pos)


def specificity(counts):
    """TN / (TN + FP)"""
    _, false_pos, _, true_neg = counts
    return _ratio(true_neg, true_neg + false_pos)


def boundary(mask):
    """Mask voxels with a face neighbour outside the mask.

    Voxels on the volume faces count as boundary.
    """
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, structure=_FACES,
                                          border_value=0)


def _nearest_rank(distances, percent=95):
    ordered = np.sort(distances)
    rank = max(1, -(-percent * len(ordered) // 100))
    return float(ordered[rank - 1])


def hd95(pred, truth):
    """95th percentile Hausdorff distance in millimeters.

    Boundary voxels of each mask are matched to the nearest boundary voxel of
    the other (Euclidean, spacing scaled). The result is the larger of the
    two directed nearest-rank 95th percentiles.

    Returns:
        (float): Distance, 0.0 if both masks are empty, None if only one is.

    Raises:
        DimensionError: If dims or spacings differ.
    """
    _check_pair(pred, truth)
    if tuple(pred.spacing_mm) != tuple(truth.spacing_mm):
        raise DimensionError(f'spacing {tuple(pred.spacing_mm)} and '
                             f'{tuple(truth.spacing_mm)} differ')
    pred_any, truth_any = np.any(pred.mask), np.any(truth.mask)
    if not pred_any and not truth_any:
        return 0.0
    if not pred_any or not truth_any:
        return None
    spacing = np.asarray(truth.spacing_mm, dtype=np.float64)
    pred_points = np.argwhere(boundary(pred.mask)) * spacing
    truth_points = np.argwhere(boundary(truth.mask)) * spacing
    to_truth, _ = cKDTree(truth_points).query(pred_points)
    to_pred, _ = cKDTree(pred_points).query(truth_points)
    return max(_nearest_rank(to_truth), _nearest_rank(to_pred))


def evaluate(pred_labels, truth_labels, spacing=None, subject_id=''):
    """Computes every metric for WT, TC and ET.

    Args:
        pred_labels (LabelVolume): Prediction.
        truth_labels (LabelVolume): Ground truth.
        spacing (tuple): (default: truth spacing) Voxel spacing in mm.
        subject_id (str): (default: '') Stored in the report.

    Returns:
        (MetricsReport): The report.

    Raises:
        DimensionError: If dims differ.
    """
    start = time.time()
    if pred_labels.dims != truth_labels.dims:
        raise DimensionError(f'prediction {_shape_str(pred_labels.dims)} and '
                             f'truth {_shape_str(truth_labels.dims)} differ')
    spacing = tuple(truth_labels.spacing_mm if spacing is None else spacing)
    regions = {}
    voxels = {'total': int(truth_labels.labels.size)}
    for kind in REGIONS:
        pred = region_mask(pred_labels, kind)
        truth = region_mask(truth_labels, kind)
        pred.spacing_mm = truth.spacing_mm = spacing
        counts = confusion(pred, truth)
        regions[kind] = {
            'dsc': dsc(counts),
            'sensitivity': sensitivity(counts),
            'ppv': ppv(counts),
            'specificity': specificity(counts),
            'hd95_mm': hd95(pred, truth),
            }
        voxels[f'{kind}_truth'] = int(np.count_nonzero(truth.mask))
        voxels[f'{kind}_pred'] = int(np.count_nonzero(pred.mask))
    return MetricsReport(regions, voxels, time.time() - start, subject_id)


def aggregate(reports):
    """Mean, std, median and quartiles of each metric over subjects.

    Undefined values are skipped; a metric with no defined value gets None
    for every statistic.

    Args:
        reports (list): MetricsReport objects (or their `to_dict()` form).

    Returns:
        dict: region -> metric -> {mean, std, median, q25, q75, n}
    """
    rows = [report.to_dict() if isinstance(report, MetricsReport) else report
            for report in reports]
    summary = {}
    for kind in REGIONS:
        summary[kind] = {}
        for metric in METRICS:
            values = np.array([row['regions'][kind][metric] for row in rows
                               if row['regions'][kind][metric] is not None],
                              dtype=np.float64)
            if not values.size:
                summary[kind][metric] = dict.fromkeys(
                    ('mean', 'std', 'median', 'q25', 'q75'), None)
                summary[kind][metric]['n'] = 0
                continue
            summary[kind][metric] = {
                'mean': float(values.mean()),
                'std': float(values.std()),
                'median': float(np.median(values)),
                'q25': float(np.percentile(values, 25)),
                'q75': float(np.percentile(values, 75)),
                'n': int(values.size),
                }
    return summary
