"""### Whole-volume segmentation

Every voxel is classified from the patch centered on it, with two
shortcuts: voxels outside a bounding box are healthy (class 0), and voxels
that are zero in all four modalities are healthy without running the
network.

Voxels are visited in (z, y, x) row-major order and classified in fixed
size chunks. Chunks do not depend on the number of workers, so 1 and N
workers give identical labels.
"""
__all__ = [
    'BoundingBox',
    'BBOX_MODES',
    'OVERLAY_COLORS',
    'compute_bbox',
    'segment_volume',
    'overlay_image',
    'export_overlay',
    ]

import concurrent.futures
from dataclasses import dataclass
import logging
import time
import warnings
import numpy as np
from scipy import ndimage
from . import classifier
from . import io
from .data import LabelVolume, PatchSource
from .tensor import Tensor
from .tools import (MODALITIES, DimensionError, UsageError, _progress,
                    _shape_str)

LOGGER = logging.getLogger(__name__)

BBOX_MODES = ('full', 'flair_threshold', 'provided_mask')
OVERLAY_COLORS = {
    1: (255, 255, 0),
    2: (0, 255, 0),
    3: (0, 0, 255),
    }
# Slice axis name -> array axis of a (z, y, x) volume
_SLICE_AXES = {'axial': 0, 'coronal': 1, 'sagittal': 2}


@dataclass
class BoundingBox:
    """Inclusive voxel box, `lower` and `upper` are (z, y, x)."""
    lower: tuple
    upper: tuple
    margin: int = 0

    def __post_init__(self):
        self.lower = tuple(int(value) for value in self.lower)
        self.upper = tuple(int(value) for value in self.upper)
        if any(low > high for low, high in zip(self.lower, self.upper)):
            raise UsageError(f'box lower {self.lower} exceeds upper '
                             f'{self.upper}')

    @classmethod
    def full(cls, dims):
        return cls((0, 0, 0), tuple(extent - 1 for extent in dims))

    def slices(self):
        return tuple(slice(low, high + 1)
                     for low, high in zip(self.lower, self.upper))

    @property
    def voxels(self):
        return int(np.prod([high - low + 1 for low, high
                            in zip(self.lower, self.upper)]))

    def mask(self, dims):
        inside = np.zeros(dims, dtype=bool)
        inside[self.slices()] = True
        return inside


def _box_around(selected, margin):
    points = np.argwhere(selected)
    dims = selected.shape
    lower = np.maximum(points.min(axis=0) - margin, 0)
    upper = np.minimum(points.max(axis=0) + margin, np.array(dims) - 1)
    return BoundingBox(lower, upper, margin)


def _largest_component(selected):
    components, count = ndimage.label(selected,
                                      ndimage.generate_binary_structure(3, 1))
    if count <= 1:
        return selected
    sizes = np.bincount(components.ravel())
    sizes[0] = 0
    return components == sizes.argmax()


def compute_bbox(volume, mode='flair_threshold', margin=3, k=1.5, mask=None,
                 largest_component=False):
    """Box that restricts inference to the tumor neighbourhood.

    Args:
        volume (MultimodalVolume): Scans, normalized or raw.
        mode (str): (default: 'flair_threshold')
                    'full' the whole volume.
                    'flair_threshold' FLAIR voxels above mean + k std of the
                    nonzero FLAIR voxels.
                    'provided_mask' the voxels of `mask`.
        margin (int): (default: 3) Voxels added on every side, clipped to the
                      volume.
        k (float): (default: 1.5) Threshold in standard deviations.
        mask (np.ndarray): (default: None) Binary mask for 'provided_mask'.
        largest_component (bool): (default: False) Keep only the largest
                                  face-connected group of thresholded voxels.
                                  By default the box covers every selected
                                  voxel, so separate lesions all stay inside.

    Returns:
        (BoundingBox): The box. Falls back to the full volume, with a
                       RuntimeWarning, when nothing is selected.

    Raises:
        UsageError: Negative margin, unknown mode or a missing mask.
        DimensionError: If the mask dims differ from the volume.

    Examples:
        ```python
        box = compute_bbox(volume, 'flair_threshold', margin=3)
        labels = segment_volume(volume, params, box)
        ```
    """
    if margin < 0:
        raise UsageError(f'bounding box margin must be >= 0, got {margin}')
    if mode not in BBOX_MODES:
        raise UsageError(f'unknown bounding box mode {mode!r}, expected one '
                         f'of {BBOX_MODES}')
    dims = volume.dims
    full = BoundingBox.full(dims)
    full.margin = margin
    if mode == 'full':
        return full

    if mode == 'provided_mask':
        if mask is None:
            raise UsageError("bounding box mode 'provided_mask' needs a mask")
        selected = np.asarray(mask, dtype=bool)
        if selected.shape != dims:
            raise DimensionError(f'mask {_shape_str(selected.shape)} does not '
                                 f'match volume {_shape_str(dims)}')
    else:
        flair = np.asarray(volume.scans['FLAIR'], dtype=np.float64)
        nonzero = flair != 0
        selected = np.zeros(dims, dtype=bool)
        if nonzero.any():
            values = flair[nonzero]
            selected = nonzero & (flair > values.mean() + k * values.std())
        if selected.any() and largest_component:
            selected = _largest_component(selected)

    if not selected.any():
        warnings.warn(f'{mode} selected no voxels in '
                      f'{volume.subject_id!r}, using the full volume',
                      RuntimeWarning)
        return full
    box = _box_around(selected, margin)
    LOGGER.info('Bounding box %s-%s (%d of %d voxels)', box.lower, box.upper,
                box.voxels, full.voxels)
    return box


def _classify_chunk(source, centers, params):
    crops = source.batch(centers)
    patches = {modality: Tensor(crops[modality]) for modality in MODALITIES}
    return classifier.predict(patches, params)


def segment_volume(volume, params, bbox=None, omega=None, slices=None,
                   workers=1, chunk_size=64, stats=None, progress=False):
    """Classifies every voxel of a normalized volume.

    Args:
        volume (MultimodalVolume): Normalized scans.
        params (ModelParams): Trained model, shared read-only by workers.
        bbox (BoundingBox): (default: full volume) Voxels outside are 0.
        omega (int): (default: from params) In-plane patch extent.
        slices (int): (default: from params) Through-plane extent.
        workers (int): (default: 1) Threads classifying chunks.
        chunk_size (int): (default: 64) Voxels per network batch.
        stats (dict): (default: None) Filled with network_calls,
                      zero_skipped, outside_bbox, chunks and seconds.
        progress (bool): (default: False) Show a progress bar.

    Returns:
        (LabelVolume): Labels with the dims and spacing of `volume`.

    Raises:
        DimensionError: If omega/slices do not match the model.
        UsageError: For workers or chunk_size < 1.
    """
    start = time.time()
    omega = params.omega if omega is None else omega
    slices = params.slices if slices is None else slices
    if (omega, slices) != (params.omega, params.slices):
        raise DimensionError(f'patch {slices}x{omega}x{omega} does not fit a '
                             f'model trained on {params.slices}x'
                             f'{params.omega}x{params.omega}')
    if workers < 1 or chunk_size < 1:
        raise UsageError(f'workers and chunk_size must be >= 1, got '
                         f'{workers} and {chunk_size}')
    dims = volume.dims
    bbox = BoundingBox.full(dims) if bbox is None else bbox
    inside = bbox.mask(dims)
    nonzero = volume.nonzero_mask()
    centers = np.argwhere(inside & nonzero)
    chunks = [centers[begin:begin + chunk_size]
              for begin in range(0, len(centers), chunk_size)]
    LOGGER.info('Segmenting %s: %d voxels in %d chunks, %d worker(s)',
                volume.subject_id or 'volume', len(centers), len(chunks),
                workers)

    source = PatchSource(volume, omega, slices)
    if workers == 1:
        results = [_classify_chunk(source, chunk, params)
                   for chunk in _progress(chunks, progress, desc='segment')]
    else:
        with concurrent.futures.ThreadPoolExecutor(workers) as executor:
            futures = [executor.submit(_classify_chunk, source, chunk, params)
                       for chunk in chunks]
            results = [future.result()
                       for future in _progress(futures, progress,
                                               desc='segment')]

    labels = np.zeros(dims, dtype=np.uint8)
    for chunk, predicted in zip(chunks, results):
        labels[tuple(chunk.T)] = predicted
    if stats is not None:
        stats.update({
            'network_calls': int(len(centers)),
            'zero_skipped': int(np.count_nonzero(inside & ~nonzero)),
            'outside_bbox': int(labels.size - np.count_nonzero(inside)),
            'chunks': len(chunks),
            'seconds': time.time() - start,
            })
    LOGGER.info('Segmented in %.1f s', time.time() - start)
    return LabelVolume(labels, volume.spacing_mm,
                       params.classifier.classes)


def overlay_image(volume, pred_labels, slice_axis='axial', slice_index=0):
    """Grayscale FLAIR slice with class colored voxels as H x W x 3 uint8.

    Class 1 is yellow, 2 green and 3 blue; healthy voxels stay gray.

    Raises:
        UsageError: Unknown axis or index out of range.
    """
    if slice_axis not in _SLICE_AXES:
        raise UsageError(f'unknown slice axis {slice_axis!r}, expected one of '
                         f'{list(_SLICE_AXES)}')
    axis = _SLICE_AXES[slice_axis]
    extent = volume.dims[axis]
    if not 0 <= slice_index < extent:
        raise UsageError(f'{slice_axis} slice {slice_index} outside [0, '
                         f'{extent})')
    if pred_labels.dims != volume.dims:
        raise DimensionError(f'labels {_shape_str(pred_labels.dims)} do not '
                             f'match volume {_shape_str(volume.dims)}')
    flair = np.take(volume.scans['FLAIR'], slice_index, axis=axis)
    labels = np.take(pred_labels.labels, slice_index, axis=axis)
    low, high = float(flair.min()), float(flair.max())
    if high > low:
        gray = np.round((flair - low) / (high - low) * 255).astype(np.uint8)
    else:
        gray = np.zeros(flair.shape, dtype=np.uint8)
    rgb = np.repeat(gray[..., np.newaxis], 3, axis=-1)
    for label, color in OVERLAY_COLORS.items():
        rgb[labels == label] = color
    return rgb


def export_overlay(volume, pred_labels, slice_axis, slice_index, path):
    """Writes #overlay_image() as a binary P6 portable pixmap.

    Returns:
        (np.ndarray): The image written.
    """
    rgb = overlay_image(volume, pred_labels, slice_axis, slice_index)
    io.write_ppm(path, rgb)
    LOGGER.info('Wrote %s overlay %s', slice_axis, path)
    return rgb
