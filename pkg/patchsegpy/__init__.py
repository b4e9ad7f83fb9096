"""Pixel-wise multimodal brain tumor segmentation with a 3D to 2D patch
conversion network, written in numpy.

Each voxel is classified from the 33 x 33 x 7 patches around it in FLAIR,
T1, T1c and T2. A squeeze-and-excitation gate reweights the 7 slices of each
patch, a 1x1 convolution collapses them to a 2D map, and a 2D CNN predicts
healthy, edema, non-enhancing core or enhancing tumor.

### Modules

These are automatically imported.

- `patchsegpy.tensor` Tensors and reverse-mode differentiation.
- `patchsegpy.conversion` Slice calibration and 3D to 2D conversion.
- `patchsegpy.classifier` The 2D CNN, forward/predict, checkpoints.
- `patchsegpy.optimizer` ADADELTA.
- `patchsegpy.training` Mini-batch training loop.
- `patchsegpy.data` Volumes, patches, sampling and phantoms.
- `patchsegpy.metrics` DSC, sensitivity, PPV, specificity and HD95.
- `patchsegpy.inference` Bounding boxes, segmentation and overlays.
- `patchsegpy.io` Volume containers, checkpoints, images and logs.

### Extra Modules

These must be imported manually.

- `patchsegpy.gradcheck` Finite-difference gradient verification.
- `patchsegpy.config` Run settings.
- `patchsegpy.cli` The `python -m patchsegpy` command line.
- `patchsegpy.tools` Exceptions and helpers used in patchsegpy.
"""
__license__ = 'LGPLv3'
__version__ = '2026.10'


import sys
from pathlib import Path
from . import tensor
from . import conversion
from . import classifier
from . import optimizer
from . import training
from . import data
from . import metrics
from . import inference
from . import io
assert sys.version_info >= (3, 7), "patchsegpy requires Python >=3.7. Sorry :(."


def segment_subject(subject, checkpoint, output=None, bbox_mode='flair_threshold',
                    margin=3, workers=1, **kwargs):
    """Segments one subject directory with a trained checkpoint.

    Loads and normalizes the four modalities, computes the bounding box,
    classifies every voxel and optionally saves the prediction.

    Args:
        subject (str): Subject directory of `.mvol.json` containers.
        checkpoint (str): Checkpoint written by training.
        output (str): (default: None) Header path or directory to save the
                      prediction to. None does not write a file.
        bbox_mode (str): (default: 'flair_threshold') See
                         #patchsegpy.inference.compute_bbox().
        margin (int): (default: 3) Bounding box margin in voxels.
        workers (int): (default: 1) Inference threads.

    **kwargs:
        see #patchsegpy.inference.compute_bbox() (k, mask) and
        #patchsegpy.inference.segment_volume() (chunk_size, progress)

    Returns:
        tuple: (LabelVolume prediction, dict of run statistics)

    Examples:
        ```python
        import patchsegpy
        labels, stats = patchsegpy.segment_subject('phantoms/subject_002',
                                                   'run/checkpoint.p3d')
        print(stats['network_calls'], labels.histogram())
        ```
    """
    params = classifier.load_params(checkpoint)
    volume = data.normalize(data.load_volume(subject))
    bbox = inference.compute_bbox(volume, bbox_mode, margin,
                                  k=kwargs.get('k', 1.5),
                                  mask=kwargs.get('mask', None))
    stats = {}
    prediction = inference.segment_volume(
        volume, params, bbox, workers=workers,
        chunk_size=kwargs.get('chunk_size', 64), stats=stats,
        progress=kwargs.get('progress', False))
    if output is not None:
        stats['output'] = str(data.save_labels(prediction, Path(output)))
    return prediction, stats
