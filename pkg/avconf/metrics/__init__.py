"""Recognition error metrics."""

from avconf.metrics.wer import (
    EditCounts,
    align_counts,
    corpus_counts,
    corpus_wer,
    edit_distance,
    token_error_rate,
    wer,
)

__all__ = [
    "EditCounts",
    "align_counts",
    "corpus_counts",
    "corpus_wer",
    "edit_distance",
    "token_error_rate",
    "wer",
]
