"""
Exhaustive CTC reference.

Enumerates every path in ``V^T``, collapses it and sums the path products. Only usable
on tiny instances; it checks the forward recursion and the beam search.
"""

from typing import Dict, Iterator, Sequence, Tuple

import numpy as np

from avconf.core.errors import InputError, InstanceTooLargeError
from avconf.ctc.vocab import BLANK_ID

MAX_PATHS = 10**7
CHUNK = 1 << 16


def collapse(path: Sequence[int], blank: int = BLANK_ID) -> Tuple[int, ...]:
    """Merge adjacent repeats, then drop blanks."""
    out = []
    previous = None
    for token in path:
        token = int(token)
        if token != previous and token != blank:
            out.append(token)
        previous = token
    return tuple(out)


def _check_size(probs: np.ndarray) -> Tuple[int, int]:
    if probs.ndim != 2:
        raise InputError(f"posteriors must be (T, V), got shape {probs.shape}")
    num_frames, vocab_size = probs.shape
    if float(vocab_size) ** num_frames > MAX_PATHS:
        raise InstanceTooLargeError(
            f"{vocab_size}^{num_frames} paths exceeds the enumeration limit of {MAX_PATHS}"
        )
    return num_frames, vocab_size


def _collapsed_chunks(probs: np.ndarray, blank: int) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield ``(collapsed, path_probs)`` blocks; collapsed rows are left-packed, -1 padded."""
    num_frames, vocab_size = probs.shape
    total = vocab_size**num_frames
    frames = np.arange(num_frames)
    for start in range(0, total, CHUNK):
        index = np.arange(start, min(total, start + CHUNK))
        paths = np.stack(np.unravel_index(index, (vocab_size,) * num_frames), axis=1)
        path_probs = probs[frames, paths].prod(axis=1)
        previous = np.concatenate([np.full((len(paths), 1), -1), paths[:, :-1]], axis=1)
        keep = (paths != blank) & (paths != previous)
        order = np.argsort(~keep, axis=1, kind="stable")
        packed = np.take_along_axis(np.where(keep, paths, -1), order, axis=1)
        yield packed, path_probs


def ctc_brute_force(probs: np.ndarray, labels: Sequence[int], blank: int = BLANK_ID) -> float:
    """
    Exact ``P(y|Z)`` by enumeration.

    Args:
        probs: ``(T, V)`` per-frame probabilities
        labels: Target ids without blanks

    Raises:
        InstanceTooLargeError: ``V^T`` above ten million
    """
    probs = np.asarray(probs, dtype=np.float64)
    num_frames, _ = _check_size(probs)
    if len(labels) > num_frames:
        return 0.0
    target = np.full(num_frames, -1)
    target[: len(labels)] = labels
    total = 0.0
    for packed, path_probs in _collapsed_chunks(probs, blank):
        total += float(path_probs[(packed == target).all(axis=1)].sum())
    return total


def sequence_distribution(
    probs: np.ndarray, blank: int = BLANK_ID
) -> Dict[Tuple[int, ...], float]:
    """Probability of every collapsed label sequence with nonzero mass."""
    probs = np.asarray(probs, dtype=np.float64)
    _check_size(probs)
    totals: Dict[Tuple[int, ...], float] = {}
    for packed, path_probs in _collapsed_chunks(probs, blank):
        rows, inverse = np.unique(packed, axis=0, return_inverse=True)
        sums = np.bincount(inverse.reshape(-1), weights=path_probs, minlength=len(rows))
        for row, p in zip(rows, sums):
            key = tuple(int(v) for v in row if v >= 0)
            totals[key] = totals.get(key, 0.0) + float(p)
    return totals
