"""
Word error rate.

Levenshtein alignment with unit costs for substitutions, insertions and deletions,
divided by the reference length. The same routine gives the token error rate on id
sequences.
"""

from typing import Dict, Hashable, List, Sequence, Union

import numpy as np

from avconf.core.errors import InputError

Words = Union[str, Sequence[Hashable]]


def _words(text: Words) -> List[Hashable]:
    return text.split() if isinstance(text, str) else list(text)


class EditCounts:
    """Substitutions, insertions and deletions of one (or a summed set of) alignment(s)."""

    def __init__(self, substitutions: int, insertions: int, deletions: int, ref_length: int):
        self.substitutions = substitutions
        self.insertions = insertions
        self.deletions = deletions
        self.ref_length = ref_length

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self) -> float:
        if self.ref_length == 0:
            raise InputError("error rate undefined for an empty reference")
        return self.errors / self.ref_length

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.ref_length + other.ref_length,
        )

    def to_dict(self) -> Dict:
        return {
            "substitutions": self.substitutions,
            "insertions": self.insertions,
            "deletions": self.deletions,
            "ref_length": self.ref_length,
            "errors": self.errors,
            "rate": self.rate if self.ref_length else None,
        }


def edit_distance(ref: Words, hyp: Words) -> int:
    return align_counts(ref, hyp).errors


def align_counts(ref: Words, hyp: Words) -> EditCounts:
    """Minimum-cost alignment, preferring substitutions over insertion+deletion pairs on ties."""
    ref, hyp = _words(ref), _words(hyp)
    n, m = len(ref), len(hyp)
    # cost[i, j] and (sub, ins, del) of the best alignment of ref[:i] with hyp[:j]
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    ops = np.zeros((n + 1, m + 1, 3), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    ops[:, 0, 2] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    ops[0, :, 1] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            mismatch = int(ref[i - 1] != hyp[j - 1])
            candidates = (
                (cost[i - 1, j - 1] + mismatch, ops[i - 1, j - 1] + (mismatch, 0, 0)),
                (cost[i, j - 1] + 1, ops[i, j - 1] + (0, 1, 0)),
                (cost[i - 1, j] + 1, ops[i - 1, j] + (0, 0, 1)),
            )
            best = min(candidates, key=lambda c: c[0])
            cost[i, j], ops[i, j] = best
    sub, ins, dele = (int(v) for v in ops[n, m])
    return EditCounts(sub, ins, dele, n)


def wer(ref: Words, hyp: Words) -> float:
    """
    Word error rate of one hypothesis.

    Args:
        ref: Reference words (a string is split on whitespace)
        hyp: Hypothesis words

    Raises:
        InputError: empty reference
    """
    if not _words(ref):
        raise InputError("WER needs a non-empty reference")
    return align_counts(ref, hyp).rate


def corpus_counts(refs: Sequence[Words], hyps: Sequence[Words]) -> EditCounts:
    """Summed edit counts over line-aligned references and hypotheses."""
    if len(refs) != len(hyps):
        raise InputError(f"{len(refs)} references but {len(hyps)} hypotheses")
    total = EditCounts(0, 0, 0, 0)
    for ref, hyp in zip(refs, hyps):
        total = total + align_counts(ref, hyp)
    if total.ref_length == 0:
        raise InputError("WER needs a non-empty reference")
    return total


def corpus_wer(refs: Sequence[Words], hyps: Sequence[Words]) -> float:
    return corpus_counts(refs, hyps).rate


def token_error_rate(refs: Sequence[Sequence[int]], hyps: Sequence[Sequence[int]]) -> float:
    """Corpus-level error rate on token-id sequences."""
    return corpus_counts([list(r) for r in refs], [list(h) for h in hyps]).rate
