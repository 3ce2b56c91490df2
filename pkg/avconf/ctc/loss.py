"""
CTC loss.

``P(y|Z)`` sums, over every frame-level path that collapses to ``y`` (merge repeats,
then drop blanks), the product of per-frame probabilities. It is computed with the
forward recursion over the blank-interleaved target ``y'`` (length ``2|y| + 1``) in the
log domain; the gradient comes from the matching backward recursion.
"""

from typing import Sequence, Tuple

import numpy as np

from avconf.core.errors import InfeasibleAlignmentError, InputError, ParameterError
from avconf.core.tensor import Tensor
from avconf.ctc.vocab import BLANK_ID, check_labels


def interleave(labels: Sequence[int], blank: int = BLANK_ID) -> np.ndarray:
    """``[a, b]`` -> ``[-, a, -, b, -]``."""
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels: Sequence[int]) -> int:
    """Shortest path length: one frame per label plus a blank between equal neighbours."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _skip_mask(ext: np.ndarray, blank: int) -> np.ndarray:
    skip = np.zeros(ext.size, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return skip


def _forward(emit: np.ndarray, skip: np.ndarray) -> np.ndarray:
    num_frames, states = emit.shape
    alpha = np.full((num_frames, states), -np.inf)
    alpha[0, : min(2, states)] = emit[0, : min(2, states)]
    for t in range(1, num_frames):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + emit[t]
    return alpha


def _backward(emit: np.ndarray, skip: np.ndarray) -> np.ndarray:
    num_frames, states = emit.shape
    beta = np.full((num_frames, states), -np.inf)
    beta[-1, max(0, states - 2) :] = 0.0
    for t in range(num_frames - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b
    return beta


def ctc_log_likelihood(
    log_probs: np.ndarray, labels: Sequence[int], blank: int = BLANK_ID
) -> Tuple[float, np.ndarray]:
    """
    ``log P(y|Z)`` and its gradient with respect to ``log Z``.

    Args:
        log_probs: ``(T, V)`` log-posteriors
        labels: Target ids without blanks

    Returns:
        ``(log_likelihood, grad)`` where ``grad[t, k]`` is the expected occupancy of
        token ``k`` at frame ``t`` (zero everywhere when no path has nonzero probability)

    Raises:
        InfeasibleAlignmentError: fewer frames than the shortest alignment needs
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2:
        raise InputError(f"log-posteriors must be (T, V), got shape {log_probs.shape}")
    num_frames, vocab_size = log_probs.shape
    labels = check_labels(labels, vocab_size)
    required = min_frames(labels)
    if num_frames < max(required, 1):
        raise InfeasibleAlignmentError(num_frames, max(required, 1))

    ext = interleave(labels, blank)
    emit = log_probs[:, ext]
    skip = _skip_mask(ext, blank)
    alpha = _forward(emit, skip)
    log_p = float(np.logaddexp.reduce(alpha[-1, max(0, ext.size - 2) :]))

    grad = np.zeros_like(log_probs)
    if np.isneginf(log_p):
        return log_p, grad
    beta = _backward(emit, skip)
    occupancy = np.exp(alpha + beta - log_p)
    np.add.at(grad, (slice(None), ext), occupancy)
    return log_p, grad


def ctc_loss(log_probs: Tensor, labels: Sequence[int], blank: int = BLANK_ID) -> Tensor:
    """
    Negative log-likelihood ``-log P(y|Z)`` as a differentiable scalar.

    The recursion runs in float64 whatever the input dtype.

    Raises:
        InfeasibleAlignmentError: fewer frames than the shortest alignment needs
    """
    log_p, occupancy = ctc_log_likelihood(log_probs.data, labels, blank)
    dtype = log_probs.dtype

    def backward(g):
        return ((-g * occupancy).astype(dtype),)

    return Tensor._make(np.asarray(-log_p, dtype=dtype), (log_probs,), backward, "ctc_loss")


def joint_loss(final_loss, inter_losses: Sequence, weight: float = 0.5):
    """
    ``(1 - w) * final + w * mean(inter)``; with no intermediate losses, ``final``.

    Works on floats and on scalar tensors.
    """
    if not 0.0 <= weight <= 1.0:
        raise ParameterError(f"Inter-CTC weight must lie in [0, 1], got {weight}")
    if len(inter_losses) == 0:
        return final_loss
    inter = inter_losses[0]
    for loss in inter_losses[1:]:
        inter = inter + loss
    inter = inter * (1.0 / len(inter_losses))
    return final_loss * (1.0 - weight) + inter * weight
