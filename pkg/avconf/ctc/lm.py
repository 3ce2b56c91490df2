"""
Count-based n-gram language model over token ids.

Smoothing is additive and recursive: with ``delta = 0.1``, ``W`` predictable tokens
(ids ``1 .. V-1``) and ``h'`` the history ``h`` shortened by one token,

    P(w | h) = (c(h, w) + delta * W * P(w | h')) / (c(h) + delta * W)

bottoming out at the uniform distribution ``1 / W``. For order 1 this is
``(c(w) + delta) / (N + delta * W)``. Sentences are left-padded with the start id 0
(the CTC blank, which is never predicted).
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

from avconf.core.errors import InputError, ParameterError
from avconf.ctc.vocab import check_labels

logger = logging.getLogger(__name__)

BOS_ID = 0
DEFAULT_DELTA = 0.1


class NgramLM:
    """Additive-smoothing back-off n-gram model."""

    def __init__(self, order: int, vocab_size: int, delta: float = DEFAULT_DELTA):
        if order < 1:
            raise ParameterError(f"n-gram order must be >= 1, got {order}")
        if vocab_size < 2:
            raise ParameterError(f"vocabulary size must be >= 2, got {vocab_size}")
        if delta <= 0:
            raise ParameterError(f"smoothing delta must be positive, got {delta}")
        self.order = order
        self.vocab_size = vocab_size
        self.delta = delta
        self.counts: Dict[Tuple[int, ...], int] = {}
        self._context_counts: Dict[Tuple[int, ...], int] = {}

    @property
    def num_tokens(self) -> int:
        return self.vocab_size - 1

    @classmethod
    def train(
        cls,
        corpus: Sequence[Sequence[int]],
        order: int = 6,
        vocab_size: int = None,
        delta: float = DEFAULT_DELTA,
    ) -> "NgramLM":
        """
        Count n-grams of every order up to ``order``.

        Args:
            corpus: Token-id sentences (no blanks)
            order: Maximum n-gram order
            vocab_size: CTC vocabulary size including the blank; inferred when omitted
            delta: Additive smoothing constant

        Raises:
            InputError: empty corpus
        """
        sentences = [list(s) for s in corpus if len(s) > 0]
        if not sentences:
            raise InputError("cannot train a language model on an empty corpus")
        if vocab_size is None:
            vocab_size = max(max(s) for s in sentences) + 1
        lm = cls(order, vocab_size, delta)
        for sentence in sentences:
            sentence = check_labels(sentence, vocab_size)
            padded = [BOS_ID] * (order - 1) + sentence
            for position in range(order - 1, len(padded)):
                for k in range(1, order + 1):
                    gram = tuple(padded[position - k + 1 : position + 1])
                    lm.counts[gram] = lm.counts.get(gram, 0) + 1
        lm._index_contexts()
        logger.info(
            "trained lm order=%d sentences=%d ngrams=%d", order, len(sentences), len(lm.counts)
        )
        return lm

    def _index_contexts(self) -> None:
        self._context_counts = {}
        for gram, count in self.counts.items():
            context = gram[:-1]
            self._context_counts[context] = self._context_counts.get(context, 0) + count

    def _context(self, history: Sequence[int]) -> Tuple[int, ...]:
        if self.order == 1:
            return ()
        padded = [BOS_ID] * (self.order - 1) + [int(t) for t in history]
        return tuple(padded[-(self.order - 1) :])

    def prob(self, token: int, history: Sequence[int] = ()) -> float:
        """Smoothed ``P(token | history)``."""
        if not 1 <= token < self.vocab_size:
            raise InputError(f"token id {token} outside [1, {self.vocab_size})")
        context = self._context(history)
        mass = self.delta * self.num_tokens
        p = 1.0 / self.num_tokens
        for k in range(len(context) + 1):
            h = context[len(context) - k :]
            seen = self.counts.get(h + (token,), 0)
            p = (seen + mass * p) / (self._context_counts.get(h, 0) + mass)
        return p

    def log_prob(self, token: int, history: Sequence[int] = ()) -> float:
        return math.log(self.prob(token, history))

    def score_sequence(self, tokens: Sequence[int]) -> float:
        """Natural-log probability of a whole sentence."""
        tokens = [int(t) for t in tokens]
        return sum(self.log_prob(t, tokens[:i]) for i, t in enumerate(tokens))

    def perplexity(self, corpus: Sequence[Sequence[int]]) -> float:
        total = 0.0
        count = 0
        for sentence in corpus:
            total += self.score_sequence(sentence)
            count += len(sentence)
        if count == 0:
            raise InputError("perplexity needs at least one token")
        return math.exp(-total / count)

    def save(self, path: Union[str, Path]) -> None:
        lines: List[str] = [f"order={self.order} vocab_size={self.vocab_size} delta={self.delta!r}"]
        for gram in sorted(self.counts):
            lines.append(" ".join(str(t) for t in gram) + f"\t{self.counts[gram]}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "NgramLM":
        """
        Read the text format written by ``save``.

        Raises:
            InputError: missing file or a malformed line (with its number)
        """
        path = Path(path)
        if not path.exists():
            raise InputError(f"language model file not found: {path}")
        lines = path.read_text().splitlines()
        try:
            header = dict(field.split("=", 1) for field in lines[0].split())
            lm = cls(int(header["order"]), int(header["vocab_size"]), float(header["delta"]))
        except (IndexError, KeyError, ValueError) as e:
            raise InputError(f"{path}: line 1: bad header ({e})")
        for number, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                gram, count = line.split("\t")
                lm.counts[tuple(int(t) for t in gram.split())] = int(count)
            except ValueError:
                raise InputError(f"{path}: line {number}: expected '<ids>\\t<count>'")
        lm._index_contexts()
        return lm
