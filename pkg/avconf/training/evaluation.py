"""
Evaluation: greedy and beam-search error rates, Inter-CTC losses and SNR sweeps.

Toy tokens are scored as words, so the word error rate is the token error rate.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from avconf.backend.model import AVConformer, ModelOutput, check_mode
from avconf.core.errors import InfeasibleAlignmentError
from avconf.core.rng import Rng
from avconf.core.tensor import Tensor, no_grad
from avconf.ctc.decoding import SequenceScorer, beam_search, greedy_decode
from avconf.frontends.video import eval_views
from avconf.metrics.wer import corpus_counts
from avconf.noise.mixing import NoiseMixSpec
from avconf.training.toy import ToyUtterance
from avconf.training.trainer import noisy, utterance_loss

logger = logging.getLogger(__name__)


class DecodeConfig(BaseModel):
    """Beam-search settings."""

    model_config = ConfigDict(extra="forbid")

    beam_width: int = Field(16, ge=1)
    lm_weight: float = 0.6
    length_bonus: float = 0.5
    lm_order: int = Field(6, ge=1)
    use_lm: bool = True


class EvalReport:
    """Error rates and mean losses of one evaluation pass."""

    def __init__(
        self,
        mode: str,
        greedy: Dict,
        beam: Optional[Dict],
        losses: Dict[str, float],
        utterances: int,
        snr_db: float = math.inf,
    ):
        self.mode = mode
        self.greedy = greedy
        self.beam = beam
        self.losses = losses
        self.utterances = utterances
        self.snr_db = snr_db

    @property
    def wer(self) -> float:
        """Beam-search WER when available, else greedy."""
        return (self.beam or self.greedy)["rate"]

    def to_dict(self) -> Dict:
        return {
            "mode": self.mode,
            "snr_db": None if math.isinf(self.snr_db) else self.snr_db,
            "utterances": self.utterances,
            "greedy": self.greedy,
            "beam": self.beam,
            "losses": self.losses,
        }


def average_views(outputs: Sequence[ModelOutput]) -> ModelOutput:
    """Average final posteriors in probability space; intermediate outputs come from view 0."""
    if len(outputs) == 1:
        return outputs[0]
    mean = np.mean([o.posteriors for o in outputs], axis=0)
    return ModelOutput(Tensor(np.log(mean)), outputs[0].inters, outputs[0].length)


def run_model(model: AVConformer, utterance: ToyUtterance, mode: str) -> ModelOutput:
    """
    Eval-mode forward, averaged over the mirrored crop when flip averaging is on.

    Either input may be None when the mode does not need it.
    """
    mel = None
    if mode != "vo" and utterance.waveform is not None:
        mel = model.audio_frontend.featurize(utterance.waveform)
    views = [None]
    if mode != "ao" and utterance.clip is not None:
        views = [Tensor(v) for v in eval_views(utterance.clip, model.config.video_frontend)]
    with no_grad():
        return average_views([model.forward(mel, frames, mode) for frames in views])


def score_outputs(
    outputs: Sequence[ModelOutput],
    references: Sequence[List[int]],
    decode: Optional[DecodeConfig] = None,
    lm: Optional[SequenceScorer] = None,
) -> Dict[str, Optional[Dict]]:
    """Greedy and (when ``decode`` is given) beam-search edit counts against references."""
    greedy = [greedy_decode(o.posteriors) for o in outputs]
    report = {"greedy": corpus_counts(references, greedy).to_dict(), "beam": None}
    if decode is not None:
        beams = [
            beam_search(
                o.posteriors,
                decode.beam_width,
                lm if decode.use_lm else None,
                decode.lm_weight if lm is not None and decode.use_lm else 0.0,
                decode.length_bonus,
            )[0].tokens
            for o in outputs
        ]
        report["beam"] = corpus_counts(references, [list(b) for b in beams]).to_dict()
    return report


def evaluate(
    model: AVConformer,
    utterances: Sequence[ToyUtterance],
    mode: Optional[str] = None,
    noise: Optional[NoiseMixSpec] = None,
    decode: Optional[DecodeConfig] = None,
    lm: Optional[SequenceScorer] = None,
    rng: Optional[Rng] = None,
    babble: Optional[list] = None,
) -> EvalReport:
    """
    Decode ``utterances`` and score them.

    Args:
        model: Trained model (switched to eval mode)
        utterances: Toy utterances with references
        mode: One of the model's modes (default: its primary mode)
        noise: Optional noise mixed into the audio before featurization
        decode: Beam settings; greedy only when None
        lm: Language model fused into the beam search
        rng: Stream for the noise draw
        babble: Utterance pool for babble noise

    Returns:
        Greedy and beam edit counts plus mean final/Inter-CTC losses per tag
    """
    model.eval()
    mode = mode or model.modes[0]
    check_mode(model.kind, mode)
    rng = rng or Rng(0)
    outputs = []
    sums: Dict[str, float] = {}
    scored = 0
    for utterance in utterances:
        output = run_model(model, noisy(utterance, noise, rng, babble), mode)
        outputs.append(output)
        try:
            loss = utterance_loss(output, utterance.labels, model.config.interctc_weight)
        except InfeasibleAlignmentError:
            continue
        scored += 1
        sums["final"] = sums.get("final", 0.0) + loss.final
        for tag, value in loss.inters.items():
            sums[tag] = sums.get(tag, 0.0) + value
    losses = {tag: value / scored for tag, value in sorted(sums.items())} if scored else {}
    scores = score_outputs(outputs, [u.labels for u in utterances], decode, lm)
    snr = noise.snr_db if noise is not None else math.inf
    logger.info(
        "evaluated mode=%s snr=%s utterances=%d greedy_wer=%.4f",
        mode,
        snr,
        len(outputs),
        scores["greedy"]["rate"],
    )
    return EvalReport(mode, scores["greedy"], scores["beam"], losses, len(outputs), snr)


def snr_sweep(
    model: AVConformer,
    utterances: Sequence[ToyUtterance],
    snrs: Sequence[float],
    modes: Sequence[str],
    source: str = "babble",
    decode: Optional[DecodeConfig] = None,
    lm: Optional[SequenceScorer] = None,
    seed: int = 0,
    babble: Optional[list] = None,
) -> List[Dict]:
    """
    One ``{snr_db, wer, mode}`` record per (mode, SNR), sorted by mode then SNR.

    Every SNR point reuses the same noise draws (same seed) so points differ only in scale.
    """
    records = []
    for mode in modes:
        for snr in sorted(snrs):
            spec = NoiseMixSpec(source=source, snr_db=snr)
            report = evaluate(model, utterances, mode, spec, decode, lm, Rng(seed), babble)
            records.append({"snr_db": snr, "wer": report.wer, "mode": mode})
    return records


def sweep_to_text(records: Sequence[Dict], config_hash: str = "") -> str:
    """Tab-separated ``snr_db wer mode`` lines with a comment header."""
    lines = [f"# config_hash={config_hash}", "snr_db\twer\tmode"]
    lines += [f"{r['snr_db']:g}\t{r['wer']:.6f}\t{r['mode']}" for r in records]
    return "\n".join(lines) + "\n"
