"""Token vocabulary with the CTC blank at index 0."""

from typing import Dict, List, Sequence

from avconf.core.errors import InputError, ParameterError

BLANK = "<blank>"
BLANK_ID = 0


class Vocab:
    """Ordered token list; index 0 is always the blank."""

    def __init__(self, tokens: Sequence[str]):
        """
        Initialize vocabulary.

        Args:
            tokens: Token strings, blank first (it is prepended when missing)
        """
        tokens = list(tokens)
        if not tokens or tokens[0] != BLANK:
            tokens = [BLANK] + tokens
        if tokens.count(BLANK) != 1:
            raise ParameterError("blank token must appear exactly once")
        if len(set(tokens)) != len(tokens):
            raise ParameterError("vocabulary tokens must be unique")
        if len(tokens) < 2:
            raise ParameterError("vocabulary needs at least one token besides the blank")
        self.tokens = tokens
        self._index: Dict[str, int] = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def toy(cls, size: int) -> "Vocab":
        """Blank plus ``size - 1`` tokens named ``t1``, ``t2``, ..."""
        if size < 2:
            raise ParameterError(f"vocabulary size must be >= 2, got {size}")
        return cls([f"t{i}" for i in range(1, size)])

    @property
    def blank_id(self) -> int:
        return BLANK_ID

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def encode(self, words: Sequence[str]) -> List[int]:
        """Map words to ids; the blank cannot appear in a label sequence."""
        ids = []
        for word in words:
            if word not in self._index:
                raise InputError(f"token {word!r} not in vocabulary")
            if word == BLANK:
                raise InputError("label sequences cannot contain the blank")
            ids.append(self._index[word])
        return ids

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.tokens[i] for i in ids if i != BLANK_ID]

    def to_text(self, ids: Sequence[int]) -> str:
        return " ".join(self.decode(ids))


def check_labels(labels: Sequence[int], vocab_size: int) -> List[int]:
    """
    Validate a label sequence.

    Raises:
        InputError: an id outside ``[1, vocab_size)``
    """
    labels = [int(y) for y in labels]
    for y in labels:
        if not 1 <= y < vocab_size:
            raise InputError(f"label id {y} outside [1, {vocab_size})")
    return labels
