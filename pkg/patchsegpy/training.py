"""### Mini-batch training

Epochs of shuffled mini-batches, mean cross-entropy per batch, one ADADELTA
step per batch. Epoch e draws its shuffle and dropout masks from a generator
seeded with (seed, e), so a run resumed at epoch e continues exactly like an
uninterrupted one.
"""
__all__ = [
    'train_step',
    'accuracy',
    'fit',
    ]

import logging
import time
import numpy as np
from . import classifier
from . import io
from . import optimizer
from .tensor import Tensor, backward
from .tools import MODALITIES, UsageError, make_rng, _progress

LOGGER = logging.getLogger(__name__)

_EPOCH_STREAM = 1


def _batch_tensors(scans, index):
    return {modality: Tensor(scans[modality][index])
            for modality in MODALITIES}


def train_step(params, scans, labels, state, rng):
    """One ADADELTA update on a mini-batch.

    Args:
        params (ModelParams): Model, updated in place.
        scans (dict): modality -> N x L x w x w array.
        labels (np.ndarray): N class indices.
        state (AdadeltaState): Optimizer state, updated in place.
        rng (np.random.Generator): Dropout masks.

    Returns:
        (float): Mean loss of the batch before the update.
    """
    tensors = classifier.parameter_tensors(params)
    for tensor in tensors.values():
        tensor.zero_grad()
    patches = {modality: Tensor(scans[modality]) for modality in MODALITIES}
    loss = classifier.loss(patches, labels, params, rng)
    backward(loss)
    optimizer.step(tensors, optimizer.gradient_set(tensors), state)
    return loss.item()


def accuracy(params, scans, labels, chunk_size=64):
    """Fraction of patches `classifier.predict` gets right."""
    count = len(labels)
    if not count:
        raise UsageError('accuracy of an empty set')
    correct = 0
    for begin in range(0, count, chunk_size):
        index = slice(begin, begin + chunk_size)
        predicted = classifier.predict(_batch_tensors(scans, index), params)
        correct += int(np.count_nonzero(predicted == labels[index]))
    return correct / count


def fit(params, scans, labels, epochs=20, batch_size=32, seed=0, state=None,
        start_epoch=0, log_path=None, timing_path=None, target_accuracy=None,
        progress=False):
    """Trains `params` in place.

    Args:
        params (ModelParams): Model to train.
        scans (dict): modality -> N x L x w x w array (see
                      `data.stack_patches`).
        labels (np.ndarray): N class indices.
        epochs (int): (default: 20) Last epoch to run (exclusive), counting
                      from 0.
        batch_size (int): (default: 32) Patches per update.
        seed (int): (default: 0) Seed of shuffles and dropout masks.
        state (AdadeltaState): (default: fresh) Optimizer state.
        start_epoch (int): (default: 0) First epoch, for resumed runs.
        log_path (str): (default: None) JSON-lines file receiving
                        {epoch, loss, accuracy, seed} per epoch.
        timing_path (str): (default: None) JSON-lines file receiving
                           {epoch, seconds} per epoch.
        target_accuracy (float): (default: None) Stop once the training
                                 accuracy reaches this.
        progress (bool): (default: False) Progress bar over epochs.

    Returns:
        tuple: (list of per-epoch records, AdadeltaState)

    Raises:
        UsageError: For an empty training set or batch_size < 1.
    """
    count = len(labels)
    if not count:
        raise UsageError('the training set is empty')
    if batch_size < 1:
        raise UsageError(f'batch_size must be >= 1, got {batch_size}')
    state = optimizer.init_state(params) if state is None else state
    history = []
    for epoch in _progress(range(start_epoch, epochs), progress,
                           desc='epochs'):
        start = time.time()
        rng = make_rng([seed, _EPOCH_STREAM, epoch])
        order = rng.permutation(count)
        total = 0.0
        for begin in range(0, count, batch_size):
            index = order[begin:begin + batch_size]
            batch = {modality: scans[modality][index]
                     for modality in MODALITIES}
            batch_loss = train_step(params, batch, labels[index], state, rng)
            total += batch_loss * len(index)
            LOGGER.debug('epoch %d batch %d loss %.5f', epoch,
                         begin // batch_size, batch_loss)
        record = {
            'epoch': epoch,
            'loss': total / count,
            'accuracy': accuracy(params, scans, labels),
            'seed': seed,
            }
        seconds = time.time() - start
        history.append(record)
        LOGGER.info('epoch %d loss %.5f accuracy %.4f (%.1f s)', epoch,
                    record['loss'], record['accuracy'], seconds)
        if log_path is not None:
            io.write_json_lines(log_path, [record], append=True)
        if timing_path is not None:
            io.write_json_lines(timing_path,
                                [{'epoch': epoch, 'seconds': seconds}],
                                append=True)
        if target_accuracy is not None \
                and record['accuracy'] >= target_accuracy:
            LOGGER.info('reached accuracy %.4f after %d steps',
                        record['accuracy'], state.steps)
            break
    return history, state
