"""
Stochastic weight averaging.

Parameters are averaged elementwise across checkpoints. Averaged weights invalidate the
batch-norm running statistics, so ``recalibrate_batch_norm`` re-estimates them with one
pass over training data using a cumulative average.
"""

import logging
from typing import Callable, Iterable, Sequence

import numpy as np

from avconf.core.errors import InputError
from avconf.core.serialization import Checkpoint, compare_manifests
from avconf.core.tensor import no_grad
from avconf.nn.layers import BatchNorm
from avconf.nn.module import Module

logger = logging.getLogger(__name__)


def _shapes(checkpoint: Checkpoint, kinds=("param", "buffer")):
    return {
        name: tuple(array.shape)
        for name, (kind, array) in checkpoint.tensors.items()
        if kind in kinds
    }


def swa_average(checkpoints: Sequence[Checkpoint]) -> Checkpoint:
    """
    Mean of the parameters of ``checkpoints``.

    Buffers are copied from the last checkpoint (recalibrate them afterwards) and optimizer
    state is dropped.

    Raises:
        InputError: no checkpoints
        ManifestMismatchError: parameter or buffer names/shapes differ
    """
    if not checkpoints:
        raise InputError("SWA needs at least one checkpoint")
    reference = _shapes(checkpoints[0])
    for checkpoint in checkpoints[1:]:
        compare_manifests(reference, _shapes(checkpoint))

    last = checkpoints[-1]
    tensors = {}
    for name in last.names("param"):
        stacked = np.stack([c.tensors[name][1].astype(np.float64) for c in checkpoints])
        tensors[name] = ("param", stacked.mean(axis=0).astype(last.tensors[name][1].dtype))
    for name in last.names("buffer"):
        tensors[name] = ("buffer", last.tensors[name][1].copy())
    metadata = {k: v for k, v in last.metadata.items() if k != "optimizer"}
    metadata["swa_count"] = len(checkpoints)
    logger.info("averaged checkpoints count=%d params=%d", len(checkpoints), len(tensors))
    return Checkpoint(tensors, metadata)


def recalibrate_batch_norm(model: Module, forward_passes: Iterable[Callable[[], object]]) -> int:
    """
    Re-estimate every batch-norm layer's running statistics.

    Only the batch-norm layers are switched to training mode (dropout stays off); their
    momentum is set to a cumulative average for the duration of the pass.

    Args:
        model: Model whose weights were just averaged
        forward_passes: Callables that each run one forward pass of ``model``

    Returns:
        Number of forward passes run
    """
    model.eval()
    layers = [m for _, m in model.named_modules() if isinstance(m, BatchNorm)]
    saved = [layer.momentum for layer in layers]
    model.reset_running_stats()
    for layer in layers:
        layer.momentum = None
        layer.training = True
    count = 0
    with no_grad():
        for run in forward_passes:
            run()
            count += 1
    for layer, momentum in zip(layers, saved):
        layer.momentum = momentum
        layer.training = False
    logger.info("recalibrated batch norm layers=%d passes=%d", len(layers), count)
    return count
