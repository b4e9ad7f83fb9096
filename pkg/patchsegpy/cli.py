"""### Command line interface

```
python -m patchsegpy phantom OUT [--subjects N]
python -m patchsegpy train SUBJECT [SUBJECT ...] --output DIR [--resume CKPT]
python -m patchsegpy predict CKPT SUBJECT --output DIR [--overlay]
python -m patchsegpy evaluate --pred P [P ...] --truth T [T ...] --output DIR
python -m patchsegpy gradcheck
python -m patchsegpy ablate SUBJECT [SUBJECT ...] --test SUBJECT --output DIR
```

Settings come from the RunConfig defaults, then `--config FILE`, then the
flags given on the command line. Exit codes: 0 success, 1 usage error,
2 data or format error, 3 verification failure.
"""
__all__ = [
    'EXIT_OK',
    'EXIT_USAGE',
    'EXIT_DATA',
    'EXIT_VERIFY',
    'CHECKPOINT_NAME',
    'build_parser',
    'cmd_phantom',
    'cmd_train',
    'cmd_predict',
    'cmd_evaluate',
    'cmd_gradcheck',
    'cmd_ablate',
    'main',
    ]

import argparse
from dataclasses import fields
import logging
from pathlib import Path
import sys
from . import classifier
from . import data
from . import gradcheck
from . import inference
from . import io
from . import metrics
from . import optimizer
from . import training
from .config import RunConfig, read_config, merge_config, write_config_echo
from .tensor import set_precision
from .tools import (DimensionError, FormatError, ModalityError, UsageError,
                    make_rng)

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3

CHECKPOINT_NAME = 'checkpoint.p3d'
TRAIN_LOG = 'train_log.jsonl'
TIMING_LOG = 'timing.jsonl'
PREDICTION_NAME = 'prediction.mvol.json'
_INIT_STREAM = 0


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _config_flags():
    flags = _Parser(add_help=False)
    group = flags.add_argument_group('settings (override --config)')
    group.add_argument('--config', type=Path,
                       help='JSON file of settings')
    group.add_argument('--omega', type=int, help='in-plane patch size (33)')
    group.add_argument('--slices', type=int, help='slices per patch L (7)')
    group.add_argument('--reduction', type=int,
                       help='excitation reduction ratio r (2)')
    group.add_argument('--bottleneck-channels', type=int,
                       help='2D maps per modality (1)')
    group.add_argument('--classes', type=int, help='number of classes (4)')
    group.add_argument('--kernels', type=int, nargs='+',
                       help='conv kernel counts (32 32 32 64 64 64)')
    group.add_argument('--hidden', type=int, nargs='+',
                       help='hidden dense units (64 32)')
    group.add_argument('--dropout', type=float, help='dropout p (0.5)')
    group.add_argument('--no-se', dest='se_enabled', action='store_const',
                       const=False, help='bypass slice calibration')
    group.add_argument('--batch-size', type=int, help='patches per step (32)')
    group.add_argument('--epochs', type=int, help='training epochs (20)')
    group.add_argument('--patches-per-class', type=int,
                       help='training patches per class and subject (320)')
    group.add_argument('--border-fraction', type=float,
                       help='share of healthy patches next to the tumor '
                            '(0.5)')
    group.add_argument('--border-margin', type=int,
                       help='tumor border width in voxels (3)')
    group.add_argument('--seed', type=int, help='random seed (0)')
    group.add_argument('--lr', dest='learning_rate', type=float,
                       help='ADADELTA learning rate (1.0)')
    group.add_argument('--rho', type=float, help='ADADELTA decay (0.95)')
    group.add_argument('--epsilon', type=float, help='ADADELTA fuzz (1e-6)')
    group.add_argument('--bbox-mode', choices=inference.BBOX_MODES,
                       help='inference box (flair_threshold)')
    group.add_argument('--bbox-margin', type=int, help='box margin (3)')
    group.add_argument('--bbox-k', type=float,
                       help='FLAIR threshold in std (1.5)')
    group.add_argument('--bbox-largest-component',
                       dest='bbox_largest_component', action='store_const',
                       const=True, help='box only the largest bright '
                                       'region')
    group.add_argument('--workers', type=int, help='inference threads (1)')
    group.add_argument('--chunk-size', type=int,
                       help='voxels per inference batch (64)')
    group.add_argument('--precision', choices=('float32', 'float64'),
                       help='arithmetic precision (float32)')
    group.add_argument('--dims', type=int, nargs=3,
                       help='phantom dims D H W (48 48 48)')
    group.add_argument('--spacing', dest='spacing_mm', type=float, nargs=3,
                       help='phantom spacing in mm (1 1 1)')
    group.add_argument('--phantom-layout', choices=data.PHANTOM_LAYOUTS,
                       help='phantom tumor core layout (rim)')
    group.add_argument('-v', '--verbose', action='store_true',
                       help='debug logging')
    group.add_argument('--progress', action='store_true',
                       help='show progress bars')
    return flags


def build_parser():
    """Returns the argument parser with one subparser per command."""
    flags = _config_flags()
    parser = _Parser(prog='patchsegpy',
                     description='3D to 2D patch conversion network for '
                                 'multimodal brain tumor segmentation')
    commands = parser.add_subparsers(dest='command', required=True)

    phantom = commands.add_parser('phantom', parents=[flags],
                                  help='generate synthetic subjects')
    phantom.add_argument('output', type=Path)
    phantom.add_argument('--subjects', type=int, default=1,
                         help='number of subjects, seeds seed..seed+N-1')

    train = commands.add_parser('train', parents=[flags],
                                help='train on subject directories')
    train.add_argument('subjects', type=Path, nargs='+')
    train.add_argument('--output', type=Path, required=True)
    train.add_argument('--resume', type=Path,
                       help='checkpoint to continue training from')

    predict = commands.add_parser('predict', parents=[flags],
                                  help='segment a subject')
    predict.add_argument('checkpoint', type=Path)
    predict.add_argument('subject', type=Path)
    predict.add_argument('--output', type=Path, required=True)
    predict.add_argument('--mask', type=Path,
                         help="labels container for --bbox-mode "
                              "provided_mask")
    predict.add_argument('--overlay', action='store_true',
                         help='write P6 overlays')
    predict.add_argument('--overlay-axis', action='append',
                         choices=('axial', 'coronal', 'sagittal'),
                         help='overlay view, repeatable (axial, sagittal)')
    predict.add_argument('--overlay-index', type=int,
                         help='slice index (default: box center)')

    evaluate = commands.add_parser('evaluate', parents=[flags],
                                   help='score predictions')
    evaluate.add_argument('--pred', type=Path, nargs='+', required=True)
    evaluate.add_argument('--truth', type=Path, nargs='+', required=True)
    evaluate.add_argument('--output', type=Path, required=True)
    evaluate.add_argument('--aggregate', action='store_true',
                          help='add mean/std/median/quartile rows')

    check = commands.add_parser('gradcheck', parents=[flags],
                                help='finite-difference gradient suite')
    check.add_argument('--seeds', type=int, default=20)

    ablate = commands.add_parser('ablate', parents=[flags],
                                 help='train with and without slice '
                                      'calibration and compare')
    ablate.add_argument('subjects', type=Path, nargs='+')
    ablate.add_argument('--test', type=Path, required=True)
    ablate.add_argument('--output', type=Path, required=True)
    return parser


def _settings(args):
    config = RunConfig()
    if args.config is not None:
        config = read_config(args.config, config)
    return merge_config(config, {field.name: getattr(args, field.name, None)
                                 for field in fields(RunConfig)})


def _require(path, what):
    if not Path(path).exists():
        raise UsageError(f'{what} {path} does not exist')


def _histogram_line(labels):
    counts = labels.histogram()
    return ', '.join(f'{name}={count}' for name, count
                     in zip(classifier.CLASS_NAMES, counts))


# Commands

def cmd_phantom(config, output, subjects=1):
    """Writes phantom subjects, one directory of five containers each.

    With one subject the containers go straight into `output`, otherwise
    into `output/subject_000`, `output/subject_001`, ...

    Returns:
        list: The subject directories.
    """
    if subjects < 1:
        raise UsageError(f'--subjects must be >= 1, got {subjects}')
    output = Path(output)
    directories = []
    for index in range(subjects):
        directory = output if subjects == 1 else output / f'subject_{index:03d}'
        volume, labels = data.generate_phantom(
            config.dims, config.seed + index, spacing_mm=config.spacing_mm,
            subject_id=directory.name, layout=config.phantom_layout)
        data.save_volume(volume, directory)
        data.save_labels(labels, directory)
        print(f'{directory}: {_histogram_line(labels)}')
        directories.append(directory)
    write_config_echo(config, output, 'phantom', output=output,
                      subjects=subjects)
    return directories


def _training_set(config, subjects):
    patches = []
    for index, subject in enumerate(subjects):
        _require(subject, 'subject')
        volume = data.normalize(data.load_volume(subject))
        labels = data.load_labels(subject, config.classes)
        plan = data.SamplingPlan.balanced(
            config.patches_per_class, config.classes, config.seed + index,
            border_fraction=config.border_fraction,
            border_margin=config.border_margin)
        patches.extend(data.sample_training_set(volume, labels, plan,
                                                config.omega, config.slices))
    if not patches:
        raise UsageError('the training set is empty')
    LOGGER.info('Training set: %d patches from %d subject(s)', len(patches),
                len(subjects))
    return data.stack_patches(patches)


def _new_model(config):
    return classifier.init_model_params(
        omega=config.omega, slices=config.slices, reduction=config.reduction,
        bottleneck_channels=config.bottleneck_channels,
        classes=config.classes, kernels=config.kernels, hidden=config.hidden,
        dropout=config.dropout, se_enabled=config.se_enabled,
        rng=make_rng([config.seed, _INIT_STREAM]))


def _train(config, subjects, output, resume=None, progress=False):
    scans, labels = _training_set(config, subjects)
    output = Path(output)
    output.mkdir(parents=True, exist_ok=True)
    start_epoch = 0
    if resume is not None:
        _require(resume, 'checkpoint')
        params, state, extra = classifier.load_checkpoint(resume)
        start_epoch = int(extra.get('epochs_done', 0))
        LOGGER.info('Resuming %s at epoch %d', resume, start_epoch)
    else:
        params, state = _new_model(config), None
        for name in (TRAIN_LOG, TIMING_LOG):
            (output / name).write_text('')
    if state is None:
        state = optimizer.init_state(params, config.rho, config.epsilon,
                                     config.learning_rate)
    history, state = training.fit(
        params, scans, labels, epochs=config.epochs,
        batch_size=config.batch_size, seed=config.seed, state=state,
        start_epoch=start_epoch, log_path=output / TRAIN_LOG,
        timing_path=output / TIMING_LOG, progress=progress)
    epochs_done = history[-1]['epoch'] + 1 if history else start_epoch
    checkpoint = output / CHECKPOINT_NAME
    classifier.save_params(params, checkpoint, state,
                           {'seed': config.seed, 'epochs_done': epochs_done})
    return params, history, checkpoint


def cmd_train(config, subjects, output, resume=None, progress=False):
    """Trains on balanced patches and writes checkpoint, logs, config echo.

    Returns:
        (pathlib.Path): The checkpoint.
    """
    if not subjects:
        raise UsageError('train needs at least one subject directory')
    _, history, checkpoint = _train(config, subjects, output, resume,
                                    progress)
    write_config_echo(config, output, 'train', subjects=list(subjects),
                      output=output, resume=resume)
    if history:
        print(f'epoch {history[-1]["epoch"]}: loss '
              f'{history[-1]["loss"]:.5f} accuracy '
              f'{history[-1]["accuracy"]:.4f}')
    print(f'checkpoint: {checkpoint}')
    return checkpoint


def _segment(config, params, subject, mask=None, progress=False):
    _require(subject, 'subject')
    volume = data.normalize(data.load_volume(subject))
    provided = None
    if mask is not None:
        _require(mask, 'mask')
        provided = data.load_labels(mask).labels > 0
    bbox = inference.compute_bbox(
        volume, config.bbox_mode, config.bbox_margin, config.bbox_k,
        mask=provided, largest_component=config.bbox_largest_component)
    stats = {}
    prediction = inference.segment_volume(
        volume, params, bbox, workers=config.workers,
        chunk_size=config.chunk_size, stats=stats, progress=progress)
    return volume, bbox, prediction, stats


def cmd_predict(config, checkpoint, subject, output, mask=None,
                overlay=False, overlay_axes=None, overlay_index=None,
                progress=False):
    """Segments a subject with a trained checkpoint.

    Writes `prediction.mvol.json`, `inference_stats.json`, optional P6
    overlays and the config echo into `output`.

    Returns:
        (pathlib.Path): The prediction header.
    """
    _require(checkpoint, 'checkpoint')
    params = classifier.load_params(checkpoint)
    volume, bbox, prediction, stats = _segment(config, params, subject, mask,
                                               progress)
    output = Path(output)
    header = data.save_labels(prediction, output / PREDICTION_NAME)
    stats.update({'box_lower': list(bbox.lower), 'box_upper': list(bbox.upper),
                  'class_counts': prediction.histogram().tolist()})
    io.write_json(output / 'inference_stats.json', stats)
    if overlay:
        for axis in overlay_axes or ('axial', 'sagittal'):
            index = overlay_index
            if index is None:
                axis_number = ('axial', 'coronal', 'sagittal').index(axis)
                index = (bbox.lower[axis_number]
                         + bbox.upper[axis_number]) // 2
            inference.export_overlay(volume, prediction, axis, index,
                                     output / f'overlay_{axis}_{index:03d}.ppm')
    write_config_echo(config, output, 'predict', checkpoint=checkpoint,
                      subject=subject, output=output, mask=mask)
    print(f'{header}: {_histogram_line(prediction)}; '
          f'{stats["network_calls"]} network calls, {stats["zero_skipped"]} '
          f'zero voxels skipped, {stats["seconds"]:.1f} s')
    return header


def cmd_evaluate(config, predictions, truths, output, aggregate=False):
    """Scores predictions against ground truth into `metrics.json`.

    Returns:
        (dict): The report written.
    """
    if len(predictions) != len(truths):
        raise UsageError(f'{len(predictions)} predictions but {len(truths)} '
                         'ground truths')
    reports = []
    for pred_path, truth_path in zip(predictions, truths):
        _require(pred_path, 'prediction')
        _require(truth_path, 'ground truth')
        pred = data.load_labels(pred_path, config.classes)
        truth = data.load_labels(truth_path, config.classes)
        subject_id = Path(truth_path).name
        try:
            report = metrics.evaluate(pred, truth, subject_id=subject_id)
        except DimensionError as error:
            raise UsageError(f'{pred_path} vs {truth_path}: {error}')
        reports.append(report.to_dict())
        for kind, row in report.regions.items():
            print(f'{subject_id} {kind}: ' + ' '.join(
                f'{name}={"n/a" if value is None else f"{value:.4f}"}'
                for name, value in row.items()))
    result = {'subjects': reports}
    if aggregate:
        result['aggregate'] = metrics.aggregate(reports)
    output = Path(output)
    io.write_json(output / 'metrics.json', result)
    write_config_echo(config, output, 'evaluate', pred=list(predictions),
                      truth=list(truths), output=output, aggregate=aggregate)
    return result


def cmd_gradcheck(config, seeds=20):
    """Runs the float64 gradient suite.

    Returns:
        (bool): True if every check passed.
    """
    report = gradcheck.run_suite(seeds=seeds)
    for name, error, passed in report:
        print(f'{name:<16} {error:.3e} {"pass" if passed else "FAIL"}')
    return all(passed for _, _, passed in report)


def cmd_ablate(config, subjects, test_subject, output, progress=False):
    """Trains with and without slice calibration and compares DSC/HD95.

    Both runs share seed, data and architecture. Writes `ablation.json`
    with region -> metric -> {'se': value, 'no_se': value}.
    """
    output = Path(output)
    truth = data.load_labels(test_subject, config.classes)
    table = {}
    for name, enabled in (('se', True), ('no_se', False)):
        variant = merge_config(config, {'se_enabled': enabled})
        params, _, _ = _train(variant, subjects, output / name,
                              progress=progress)
        _, _, prediction, _ = _segment(variant, params, test_subject,
                                       progress=progress)
        data.save_labels(prediction, output / name / PREDICTION_NAME)
        report = metrics.evaluate(prediction, truth,
                                  subject_id=Path(test_subject).name)
        for kind, row in report.regions.items():
            for metric in ('dsc', 'hd95_mm'):
                table.setdefault(kind, {}).setdefault(metric, {})[name] = \
                    row[metric]
    io.write_json(output / 'ablation.json', table)
    write_config_echo(config, output, 'ablate', subjects=list(subjects),
                      test=test_subject, output=output)
    for kind, row in table.items():
        print(f'{kind}: ' + ' '.join(
            f'{metric} se={values["se"]} no_se={values["no_se"]}'
            for metric, values in row.items()))
    return table


def _dispatch(args, config):
    if args.command == 'phantom':
        cmd_phantom(config, args.output, args.subjects)
    elif args.command == 'train':
        cmd_train(config, args.subjects, args.output, args.resume,
                  args.progress)
    elif args.command == 'predict':
        cmd_predict(config, args.checkpoint, args.subject, args.output,
                    args.mask, args.overlay, args.overlay_axis,
                    args.overlay_index, args.progress)
    elif args.command == 'evaluate':
        cmd_evaluate(config, args.pred, args.truth, args.output,
                     args.aggregate)
    elif args.command == 'gradcheck':
        if not cmd_gradcheck(config, args.seeds):
            return EXIT_VERIFY
    elif args.command == 'ablate':
        cmd_ablate(config, args.subjects, args.test, args.output,
                   args.progress)
    return EXIT_OK


def main(argv=None):
    """Runs a command and returns its exit code."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as error:
        print(f'patchsegpy: error: {error}', file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(name)s %(message)s')
    try:
        config = _settings(args)
        set_precision(config.precision)
        return _dispatch(args, config)
    except (UsageError, ModalityError) as error:
        LOGGER.error('usage: %s', error)
        return EXIT_USAGE
    except (FormatError, DimensionError, OSError) as error:
        LOGGER.error('data: %s', error)
        return EXIT_DATA
