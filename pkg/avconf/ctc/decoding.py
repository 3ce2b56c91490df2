"""
CTC decoders: greedy collapse and prefix beam search with optional LM fusion.

Beam hypotheses are ranked by

    log P_ctc(prefix) + lm_weight * log P_lm(prefix) + length_bonus * len(prefix)

where ``P_ctc`` keeps separate blank-ending and label-ending probabilities per prefix.
"""

from collections import defaultdict
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from avconf.core.errors import ParameterError
from avconf.core.tensor import Tensor
from avconf.ctc.oracle import collapse
from avconf.ctc.vocab import BLANK_ID

PROB_FLOOR = 1e-12

Prefix = Tuple[int, ...]


class SequenceScorer(Protocol):
    """Anything that can score a whole token sequence (an external LM)."""

    def score_sequence(self, tokens: Sequence[int]) -> float:
        ...


class Hypothesis:
    """A decoded label sequence and its combined score."""

    def __init__(self, tokens: Prefix, log_score: float, acoustic: float, lm: float = 0.0):
        self.tokens = tuple(tokens)
        self.log_score = log_score
        self.acoustic = acoustic
        self.lm = lm

    def __repr__(self) -> str:
        return f"Hypothesis(tokens={list(self.tokens)}, log_score={self.log_score:.4f})"

    def to_dict(self) -> Dict:
        return {
            "tokens": list(self.tokens),
            "log_score": self.log_score,
            "acoustic": self.acoustic,
            "lm": self.lm,
        }


def _as_probs(posteriors: Union[Tensor, np.ndarray]) -> np.ndarray:
    data = posteriors.data if isinstance(posteriors, Tensor) else posteriors
    return np.asarray(data, dtype=np.float64)


def greedy_decode(posteriors: Union[Tensor, np.ndarray], blank: int = BLANK_ID) -> List[int]:
    """Per-frame argmax, merge repeats, drop blanks (log or linear posteriors both work)."""
    best = np.argmax(_as_probs(posteriors), axis=-1)
    return list(collapse(best, blank))


def beam_search(
    posteriors: Union[Tensor, np.ndarray],
    beam_width: int = 16,
    lm: Optional[SequenceScorer] = None,
    lm_weight: float = 0.6,
    length_bonus: float = 0.5,
    blank: int = BLANK_ID,
    nbest: Optional[int] = None,
) -> List[Hypothesis]:
    """
    CTC prefix beam search.

    Args:
        posteriors: ``(T, V)`` per-frame probabilities (floored at 1e-12 before the log)
        beam_width: Prefixes kept after every frame
        lm: Optional scorer fused into the ranking
        lm_weight: Weight of the LM log-probability
        length_bonus: Bonus per emitted token
        nbest: Hypotheses returned (default ``beam_width``)

    Returns:
        Hypotheses sorted by decreasing ``log_score``
    """
    if beam_width < 1:
        raise ParameterError(f"beam width must be >= 1, got {beam_width}")
    log_z = np.log(np.maximum(_as_probs(posteriors), PROB_FLOOR))
    vocab_size = log_z.shape[1]
    width = min(beam_width, vocab_size)
    lm_cache: Dict[Prefix, float] = {(): 0.0}

    def lm_score(prefix: Prefix) -> float:
        if lm is None:
            return 0.0
        if prefix not in lm_cache:
            lm_cache[prefix] = lm.score_sequence(prefix)
        return lm_cache[prefix]

    def rank(item) -> float:
        prefix, (p_blank, p_label) = item
        return (
            np.logaddexp(p_blank, p_label)
            + lm_weight * lm_score(prefix)
            + length_bonus * len(prefix)
        )

    beams: Dict[Prefix, Tuple[float, float]] = {(): (0.0, -np.inf)}
    for frame in log_z:
        top = set(np.argsort(-frame, kind="stable")[:width].tolist())
        nxt = defaultdict(lambda: [-np.inf, -np.inf])
        for prefix, (p_blank, p_label) in beams.items():
            total = np.logaddexp(p_blank, p_label)
            stay = nxt[prefix]
            stay[0] = np.logaddexp(stay[0], total + frame[blank])
            last = prefix[-1] if prefix else None
            for token in top | ({last} if last is not None else set()):
                if token == blank:
                    continue
                extended = nxt[prefix + (token,)]
                if token == last:
                    extended[1] = np.logaddexp(extended[1], p_blank + frame[token])
                    stay[1] = np.logaddexp(stay[1], p_label + frame[token])
                else:
                    extended[1] = np.logaddexp(extended[1], total + frame[token])
        ranked = sorted(nxt.items(), key=rank, reverse=True)[:beam_width]
        beams = {prefix: tuple(scores) for prefix, scores in ranked}

    hypotheses = []
    for prefix, (p_blank, p_label) in beams.items():
        acoustic = float(np.logaddexp(p_blank, p_label))
        lm_part = lm_score(prefix)
        score = acoustic + lm_weight * lm_part + length_bonus * len(prefix)
        hypotheses.append(Hypothesis(prefix, float(score), acoustic, lm_part))
    hypotheses.sort(key=lambda h: (-h.log_score, h.tokens))
    return hypotheses[: nbest or beam_width]


def rescore(
    hypotheses: Sequence[Hypothesis], scorer: SequenceScorer, weight: float
) -> List[Hypothesis]:
    """Add ``weight * scorer.score_sequence(tokens)`` to every hypothesis and re-sort."""
    out = []
    for hyp in hypotheses:
        extra = weight * scorer.score_sequence(hyp.tokens)
        out.append(Hypothesis(hyp.tokens, hyp.log_score + extra, hyp.acoustic, hyp.lm + extra))
    out.sort(key=lambda h: (-h.log_score, h.tokens))
    return out
