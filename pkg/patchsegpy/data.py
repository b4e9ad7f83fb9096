"""### Volumes, patches and sampling

Volumes are indexed (z, y, x). A patch is L x w x w: L slices along z, each
w x w in the (y, x) plane, centered on one voxel. Voxels outside the volume
are zero filled.

Functions:

- `load_volume`/`load_labels`/`save_volume`/`save_labels` subject
  directories of `.mvol.json` containers.
- `normalize` z-score over nonzero voxels, zeros stay zero.
- `extract_patch` one patch, `PatchSource` many patches at once.
- `sample_training_set` class-balanced sampling with flip/rotate top-up.
- `generate_phantom` synthetic subjects with nested tumor regions.
"""
__all__ = [
    'MultimodalVolume',
    'LabelVolume',
    'Patch3D',
    'SamplingPlan',
    'PatchSource',
    'AUGMENTATIONS',
    'DEFAULT_INTENSITIES',
    'PHANTOM_LAYOUTS',
    'load_volume',
    'load_labels',
    'save_volume',
    'save_labels',
    'normalize',
    'extract_patch',
    'augment',
    'sample_training_set',
    'stack_patches',
    'generate_phantom',
    ]

from dataclasses import dataclass, field
import logging
from pathlib import Path
import warnings
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage
from . import io
from .tensor import Tensor
from .tools import (MODALITIES, DimensionError, FormatError, ModalityError,
                    UsageError, make_rng, _shape_str)

LOGGER = logging.getLogger(__name__)

AUGMENTATIONS = ('flip_x', 'flip_y', 'rot180')

# Phantom class -> modality -> (mean, std). Edema is bright in FLAIR and T2,
# enhancing tumor is bright in T1c, necrosis is dark in T1 and bright in T2.
DEFAULT_INTENSITIES = {
    0: {'FLAIR': (100., 8.), 'T1': (100., 8.), 'T1c': (100., 8.),
        'T2': (100., 8.)},
    1: {'FLAIR': (160., 8.), 'T1': (85., 8.), 'T1c': (95., 8.),
        'T2': (160., 8.)},
    2: {'FLAIR': (120., 8.), 'T1': (60., 8.), 'T1c': (70., 8.),
        'T2': (190., 8.)},
    3: {'FLAIR': (140., 8.), 'T1': (90., 8.), 'T1c': (190., 8.),
        'T2': (130., 8.)},
    }

MIN_PHANTOM_EXTENT = 32
PHANTOM_LAYOUTS = ('rim', 'nested')


@dataclass
class MultimodalVolume:
    """Four co-registered scans, each a D x H x W float32 array.

    Raises:
        ModalityError: If a modality is missing.
        DimensionError: If the scans differ in dims.
        UsageError: For non-positive spacing.
    """
    scans: dict
    spacing_mm: tuple = (1.0, 1.0, 1.0)
    subject_id: str = ''

    def __post_init__(self):
        missing = [modality for modality in MODALITIES
                   if modality not in self.scans]
        if missing:
            raise ModalityError(f'volume {self.subject_id!r} lacks {missing}')
        dims = {np.shape(self.scans[modality]) for modality in MODALITIES}
        if len(dims) != 1 or len(next(iter(dims))) != 3:
            raise DimensionError(f'volume {self.subject_id!r} has scans of '
                                 f'dims {sorted(_shape_str(d) for d in dims)}')
        self.spacing_mm = tuple(float(value) for value in self.spacing_mm)
        if len(self.spacing_mm) != 3 or min(self.spacing_mm) <= 0:
            raise UsageError(f'spacing must be three positive values, got '
                             f'{self.spacing_mm}')

    @property
    def dims(self):
        return tuple(np.shape(self.scans[MODALITIES[0]]))

    def nonzero_mask(self):
        """True where at least one modality is nonzero."""
        mask = np.zeros(self.dims, dtype=bool)
        for modality in MODALITIES:
            mask |= self.scans[modality] != 0
        return mask


@dataclass
class LabelVolume:
    """Integer class map (uint8) aligned with a volume."""
    labels: np.ndarray
    spacing_mm: tuple = (1.0, 1.0, 1.0)
    classes: int = 4

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 3:
            raise DimensionError('labels must be 3D, got '
                                 + _shape_str(self.labels.shape))
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.classes):
            raise UsageError(f'labels outside [0, {self.classes})')
        self.labels = self.labels.astype(np.uint8)
        self.spacing_mm = tuple(float(value) for value in self.spacing_mm)

    @property
    def dims(self):
        return self.labels.shape

    def histogram(self):
        return np.bincount(self.labels.ravel(), minlength=self.classes)


@dataclass
class Patch3D:
    """One L x w x w crop per modality around `center` (z, y, x).

    Attributes:
        scans (dict): modality -> np.ndarray L x w x w.
        center (tuple): Voxel (z, y, x) the patch is centered on.
        label (int): Class of the center voxel, None without ground truth.
        augmentation (str): 'none' or one of `AUGMENTATIONS`.
    """
    scans: dict
    center: tuple
    label: int = None
    augmentation: str = 'none'

    def tensors(self):
        """Returns modality -> Tensor for `classifier.forward()`."""
        return {modality: Tensor(self.scans[modality])
                for modality in MODALITIES}


@dataclass
class SamplingPlan:
    """Target patch count per class and the sampling seed.

    Healthy (class 0) centers are drawn only from voxels that are nonzero in
    some modality, the voxels inference actually classifies. A
    `border_fraction` share of them comes from healthy voxels within
    `border_margin` voxels (face steps) of the tumor.

    Attributes:
        targets (dict): class -> number of patches (>= 0).
        seed (int): Seed of the center draws, augmentation and shuffle.
        border_fraction (float): (default: 0.5) Share of class 0 centers next
                                 to the tumor, in [0, 1].
        border_margin (int): (default: 3) Width of the tumor border in voxels.
    """
    targets: dict
    seed: int = 0
    border_fraction: float = 0.5
    border_margin: int = 3

    def __post_init__(self):
        if any(count < 0 for count in self.targets.values()):
            raise UsageError(f'sampling targets must be >= 0: {self.targets}')
        if not 0 <= self.border_fraction <= 1 or self.border_margin < 0:
            raise UsageError(f'border_fraction must be in [0, 1] and '
                             f'border_margin >= 0, got {self.border_fraction} '
                             f'and {self.border_margin}')

    @classmethod
    def balanced(cls, per_class, classes=4, seed=0, **kwargs):
        return cls({label: per_class for label in range(classes)}, seed,
                   **kwargs)

    def multipliers(self, labels, volume=None):
        """Augmentation factor ceil(target / available) per class.

        With `volume`, class 0 counts only its nonzero voxels. Classes without
        voxels get 0.
        """
        counts = labels.histogram()
        if volume is not None and len(counts):
            counts[0] = np.count_nonzero((labels.labels == 0)
                                         & volume.nonzero_mask())
        factors = {}
        for label, target in self.targets.items():
            available = int(counts[label]) if label < len(counts) else 0
            factors[label] = (0 if not available
                              else max(1, -(-target // available)))
        return factors


# Containers

def _container_directory(path):
    path = Path(path)
    return path if path.is_dir() else path.parent


def load_volume(path):
    """Loads the four modality containers of a subject.

    Args:
        path (str/pathlib.Path): Subject directory, or any container in it.

    Returns:
        (MultimodalVolume): Scans as float32, subject id from the headers or
                            the directory name.

    Raises:
        FormatError: On an unknown modality role, a missing modality, or
                     headers that disagree on dims or spacing.

    Examples:
        ```python
        volume = normalize(load_volume('phantoms/subject_000'))
        ```
    """
    directory = _container_directory(path)
    scans = {}
    spacing = {}
    subject_id = directory.name
    for role, header_path in io.find_containers(directory).items():
        if not str(role).startswith('modality:'):
            continue
        modality = role[len('modality:'):]
        if modality not in MODALITIES:
            raise FormatError(f'{header_path}: field role names unknown '
                              f'modality {modality!r}')
        array, header = io.read_container(header_path)
        if header['dtype'] != 'f32le':
            raise FormatError(f'{header_path}: field dtype must be f32le for '
                              'a modality')
        scans[modality] = array
        spacing[modality] = tuple(header['spacing_mm'])
        subject_id = header.get('subject_id', subject_id)
    missing = [modality for modality in MODALITIES if modality not in scans]
    if missing:
        raise FormatError(f'{directory}: field role, no container for '
                          f'modalities {missing}')
    if len(set(spacing.values())) != 1:
        raise FormatError(f'{directory}: field spacing_mm differs between '
                          'modalities')
    if len({scan.shape for scan in scans.values()}) != 1:
        raise FormatError(f'{directory}: field dims differs between '
                          'modalities')
    LOGGER.info('Loaded subject %s %s', subject_id,
                _shape_str(scans[MODALITIES[0]].shape))
    return MultimodalVolume(scans, spacing[MODALITIES[0]], subject_id)


def load_labels(path, classes=4):
    """Loads a label container.

    Args:
        path (str/pathlib.Path): The header, or a directory holding exactly
                                 one container with role 'labels'.
        classes (int): (default: 4) Number of classes c.

    Raises:
        FormatError: No labels container, wrong dtype or values >= c.
    """
    path = Path(path)
    if path.is_dir():
        header_path = io.find_containers(path).get('labels')
        if header_path is None:
            raise FormatError(f'{path}: field role, no labels container')
    else:
        header_path = path
    array, header = io.read_container(header_path)
    if header['role'] != 'labels' or header['dtype'] != 'u8':
        raise FormatError(f'{header_path}: field role/dtype must be '
                          f'labels/u8, got {header["role"]}/{header["dtype"]}')
    if array.size and int(array.max()) >= classes:
        raise FormatError(f'{header_path}: field data_file holds class '
                          f'{int(array.max())} >= {classes}')
    return LabelVolume(array, tuple(header['spacing_mm']), classes)


def save_volume(volume, directory):
    """Writes `<modality>.mvol.json` containers into a subject directory."""
    directory = Path(directory)
    for modality in MODALITIES:
        io.write_container(directory / f'{modality}{io.HEADER_SUFFIX}',
                           volume.scans[modality], volume.spacing_mm,
                           f'modality:{modality}', 'f32le',
                           subject_id=volume.subject_id)
    return directory


def save_labels(labels, path):
    """Writes a label (or prediction) container.

    Args:
        labels (LabelVolume): Class map.
        path (str/pathlib.Path): Header path, or a directory to write
                                 'labels.mvol.json' into.
    """
    path = Path(path)
    if not path.name.endswith(io.HEADER_SUFFIX):
        path = path / f'labels{io.HEADER_SUFFIX}'
    return io.write_container(path, labels.labels, labels.spacing_mm,
                              'labels', 'u8')


# Normalization and patches

def normalize(volume):
    """Z-scores each modality over its nonzero voxels.

    sigma is clamped to >= 1e-6; voxels that are zero stay exactly zero.

    Returns:
        (MultimodalVolume): A new volume.
    """
    scans = {}
    for modality in MODALITIES:
        scan = np.asarray(volume.scans[modality], dtype=np.float64)
        mask = scan != 0
        out = np.zeros_like(scan)
        if mask.any():
            values = scan[mask]
            sigma = max(values.std(), 1e-6)
            out[mask] = (values - values.mean()) / sigma
        scans[modality] = out.astype(np.float32)
    return MultimodalVolume(scans, volume.spacing_mm, volume.subject_id)


def _check_geometry(omega, slices):
    if omega < 1 or slices < 1 or omega % 2 == 0 or slices % 2 == 0:
        raise UsageError(f'patch extents must be odd and positive, got '
                         f'omega={omega}, slices={slices}')


def _check_center(center, dims):
    if len(center) != 3 or any(not 0 <= int(c) < extent
                               for c, extent in zip(center, dims)):
        raise UsageError(f'center {tuple(center)} is outside volume '
                         + _shape_str(dims))


def extract_patch(volume, center, omega=33, slices=7, labels=None):
    """Crops the L x w x w patch centered on `center`.

    The patch value at (L//2, w//2, w//2) is the volume value at `center`.

    Args:
        volume (MultimodalVolume): Source scans.
        center (tuple): Voxel (z, y, x).
        omega (int): (default: 33) In-plane extent, odd.
        slices (int): (default: 7) Through-plane extent L, odd.
        labels (LabelVolume): (default: None) Sets the patch label.

    Raises:
        UsageError: If `center` is outside the volume or extents are even.
    """
    _check_geometry(omega, slices)
    dims = volume.dims
    _check_center(center, dims)
    half = (slices // 2, omega // 2, omega // 2)
    source, target = [], []
    for c, h, extent, size in zip(center, half, dims, (slices, omega, omega)):
        start, stop = int(c) - h, int(c) - h + size
        source.append(slice(max(start, 0), min(stop, extent)))
        target.append(slice(max(start, 0) - start,
                            size - (stop - min(stop, extent))))
    scans = {}
    for modality in MODALITIES:
        patch = np.zeros((slices, omega, omega), dtype=np.float32)
        patch[tuple(target)] = volume.scans[modality][tuple(source)]
        scans[modality] = patch
    label = None if labels is None else int(labels.labels[tuple(center)])
    return Patch3D(scans, tuple(int(c) for c in center), label)


class PatchSource:
    """Zero-padded copy of a volume that crops many patches in one call.

    Args:
        volume (MultimodalVolume): Source scans.
        omega (int): (default: 33) In-plane extent.
        slices (int): (default: 7) Through-plane extent.
    """

    def __init__(self, volume, omega=33, slices=7):
        _check_geometry(omega, slices)
        self.omega = omega
        self.slices = slices
        self.dims = volume.dims
        pad = ((slices // 2,) * 2, (omega // 2,) * 2, (omega // 2,) * 2)
        self._windows = {
            modality: sliding_window_view(
                np.pad(np.asarray(volume.scans[modality], dtype=np.float32),
                       pad),
                (slices, omega, omega))
            for modality in MODALITIES}

    def batch(self, centers):
        """Returns modality -> N x L x w x w array for N (z, y, x) centers."""
        centers = np.asarray(centers, dtype=np.int64).reshape(-1, 3)
        if centers.size and (centers.min() < 0
                             or np.any(centers >= np.array(self.dims))):
            raise UsageError('a center is outside volume '
                             + _shape_str(self.dims))
        z, y, x = centers.T
        return {modality: np.ascontiguousarray(windows[z, y, x])
                for modality, windows in self._windows.items()}


def augment(patch, kind):
    """Returns a flipped/rotated copy of a patch (in-plane only).

    The center voxel is a fixed point of every augmentation.
    """
    flips = {'flip_x': (-1,), 'flip_y': (-2,), 'rot180': (-2, -1)}
    if kind not in flips:
        raise UsageError(f'unknown augmentation {kind!r}')
    scans = {modality: np.ascontiguousarray(np.flip(scan, flips[kind]))
             for modality, scan in patch.scans.items()}
    return Patch3D(scans, patch.center, patch.label, kind)


def _draw(rng, pool, count):
    if not count:
        return pool[:0]
    return pool[rng.choice(len(pool), count, replace=False)]


def _class_centers(volume, labels, label, target, plan, rng):
    """Up to `target` distinct centers of `label`, drawn per `plan`."""
    if label != 0:
        available = np.argwhere(labels.labels == label)
        return _draw(rng, available, min(target, len(available)))
    healthy = (labels.labels == 0) & volume.nonzero_mask()
    tumor = labels.labels > 0
    border = np.zeros_like(healthy)
    if plan.border_margin and plan.border_fraction and tumor.any():
        border = healthy & ndimage.binary_dilation(
            tumor, iterations=plan.border_margin)
    near = np.argwhere(border)
    far = np.argwhere(healthy & ~border)
    take_near = min(len(near), int(round(target * plan.border_fraction)))
    take_far = min(len(far), target - take_near)
    take_near = min(len(near), target - take_far)
    return np.concatenate([_draw(rng, near, take_near),
                           _draw(rng, far, take_far)])


def sample_training_set(volume, labels, plan, omega=33, slices=7):
    """Draws a class-balanced, shuffled training set.

    For each class, centers are drawn uniformly without replacement from
    that class's voxels; healthy centers come from nonzero voxels only, split
    between the tumor border and the rest of the brain (see `SamplingPlan`).
    When a class has fewer voxels than its target, all of them are used and
    the remainder is filled with augmented copies, cycling through the
    centers and then through flip_x, flip_y, rot180.

    Args:
        volume (MultimodalVolume): Normalized scans.
        labels (LabelVolume): Ground truth.
        plan (SamplingPlan): Targets and seed.
        omega (int): (default: 33) In-plane extent.
        slices (int): (default: 7) Through-plane extent.

    Returns:
        list: Patch3D objects, each labeled with labels[center].

    Raises:
        DimensionError: If volume and labels differ in dims.
    """
    if volume.dims != labels.dims:
        raise DimensionError(f'volume {_shape_str(volume.dims)} and labels '
                             f'{_shape_str(labels.dims)} differ')
    rng = make_rng(plan.seed)
    source = PatchSource(volume, omega, slices)
    patches = []
    for label in sorted(plan.targets):
        target = plan.targets[label]
        if target == 0:
            continue
        centers = _class_centers(volume, labels, label, target, plan, rng)
        count = len(centers)
        if not count:
            warnings.warn(f'class {label} has no voxels in '
                          f'{volume.subject_id!r}, sampling 0 of {target}',
                          RuntimeWarning)
            continue
        crops = source.batch(centers)
        originals = [Patch3D({modality: crops[modality][index]
                              for modality in MODALITIES},
                             tuple(int(c) for c in centers[index]), label)
                     for index in range(count)]
        patches.extend(originals)
        for extra in range(target - count):
            kind = AUGMENTATIONS[(extra // count) % len(AUGMENTATIONS)]
            patches.append(augment(originals[extra % count], kind))
        LOGGER.debug('class %d: %d drawn, %d augmented', label, count,
                     target - count)
    order = rng.permutation(len(patches))
    return [patches[index] for index in order]


def stack_patches(patches):
    """Stacks patches into (modality -> N x L x w x w array, N labels)."""
    if not patches:
        raise UsageError('no patches to stack')
    scans = {modality: np.stack([patch.scans[modality] for patch in patches])
             for modality in MODALITIES}
    labels = np.array([-1 if patch.label is None else patch.label
                       for patch in patches], dtype=np.int64)
    return scans, labels


# Phantoms

def _ellipsoid(grid, center, axes):
    return sum(((g - c) / a) ** 2 for g, c, a in zip(grid, center, axes)) <= 1


def generate_phantom(dims=(48, 48, 48), seed=0, intensities=None,
                     spacing_mm=(1.0, 1.0, 1.0), subject_id=None,
                     layout='rim'):
    """Synthetic subject: a brain ellipsoid holding a nested tumor.

    Regions from outside in: brain (0), edema (1), then the tumor core. With
    layout 'rim' the core is an enhancing shell (3) around a necrotic
    center (2), the appearance of enhancing glioma. With layout 'nested'
    the non-enhancing core (2) is the shell and enhancing tumor (3) the
    innermost ellipsoid. Either way WT contains TC contains ET.
    Every voxel draws its intensity per modality from the Gaussian of its
    class. Voxels outside the brain are exactly 0 in all modalities.

    Args:
        dims (tuple): (default: 48,48,48) D, H, W, each >= 32.
        seed (int): (default: 0) Geometry and noise seed.
        intensities (dict): (default: DEFAULT_INTENSITIES)
                            class -> modality -> (mean, std).
        spacing_mm (tuple): (default: 1,1,1) Voxel spacing.
        subject_id (str): (default: 'phantom_<seed>') Subject name.
        layout (str): (default: 'rim') 'rim' or 'nested', see above.

    Returns:
        tuple: (MultimodalVolume, LabelVolume)

    Raises:
        UsageError: If any extent is below 32, the layout is unknown or the
                    intensity table is incomplete.
    """
    if layout not in PHANTOM_LAYOUTS:
        raise UsageError(f'phantom layout must be one of {PHANTOM_LAYOUTS}, '
                         f'got {layout!r}')
    dims = tuple(int(extent) for extent in dims)
    if len(dims) != 3 or min(dims) < MIN_PHANTOM_EXTENT:
        raise UsageError(f'phantom dims must be >= {MIN_PHANTOM_EXTENT} per '
                         f'axis, got {_shape_str(dims)}')
    table = DEFAULT_INTENSITIES if intensities is None else intensities
    for label in range(4):
        for modality in MODALITIES:
            if modality not in table.get(label, {}):
                raise UsageError(f'intensity table lacks class {label} '
                                 f'{modality}')
    rng = make_rng(seed)
    extents = np.array(dims, dtype=np.float64)
    grid = np.ogrid[tuple(slice(0, extent) for extent in dims)]

    middle = (extents - 1) / 2
    brain = _ellipsoid(grid, middle, extents * 0.42 * rng.uniform(0.95, 1.0, 3))
    tumor_center = middle + rng.uniform(-0.12, 0.12, 3) * extents
    edema_axes = extents.min() * rng.uniform(0.18, 0.24, 3)
    core_axes = edema_axes * rng.uniform(0.55, 0.65)
    necrosis_axes = core_axes * 0.55

    labels = np.zeros(dims, dtype=np.uint8)
    labels[_ellipsoid(grid, tumor_center, edema_axes) & brain] = 1
    shell, center = (3, 2) if layout == 'rim' else (2, 3)
    labels[_ellipsoid(grid, tumor_center, core_axes) & brain] = shell
    labels[_ellipsoid(grid, tumor_center, necrosis_axes) & brain] = center

    scans = {}
    for modality in MODALITIES:
        scan = np.zeros(dims, dtype=np.float64)
        for label in range(4):
            mean, std = table[label][modality]
            region = brain & (labels == label)
            scan[region] = rng.normal(mean, std, int(region.sum()))
        scan[brain] = np.maximum(scan[brain], 1e-3)
        scans[modality] = scan.astype(np.float32)

    subject_id = f'phantom_{seed}' if subject_id is None else subject_id
    LOGGER.info('Generated %s %s, class counts %s', subject_id,
                _shape_str(dims), np.bincount(labels.ravel(),
                                              minlength=4).tolist())
    return (MultimodalVolume(scans, spacing_mm, subject_id),
            LabelVolume(labels, spacing_mm, 4))
