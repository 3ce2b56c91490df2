"""
Synthetic audio-visual toy task.

Every token has an audio signature (a Hann-tapered sine at its own frequency) and a
visual signature (a sinusoidal grating with its own orientation and period). An
utterance is a gap followed by ``token gap`` pairs; audio and video cover exactly the
same duration (640 samples per 25 fps video frame).
"""

import hashlib
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from avconf.core.rng import Rng
from avconf.frontends.audio import SAMPLE_RATE, Waveform
from avconf.frontends.video import FRAME_RATE, VideoClip

SAMPLES_PER_FRAME = SAMPLE_RATE // FRAME_RATE


class ToyTaskSpec(BaseModel):
    """Vocabulary, utterance lengths and renderer settings of the toy task."""

    model_config = ConfigDict(extra="forbid")

    vocab_size: int = Field(12, ge=2)
    min_tokens: int = Field(2, ge=1)
    max_tokens: int = Field(5, ge=1)
    token_frames: int = Field(5, ge=1)
    gap_frames: int = Field(2, ge=1)
    base_freq: float = Field(300.0, gt=0.0)
    freq_step: float = Field(250.0, gt=0.0)
    amplitude: float = Field(0.5, gt=0.0, le=1.0)
    frame_size: int = Field(20, ge=4)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "ToyTaskSpec":
        if self.min_tokens > self.max_tokens:
            raise ValueError(f"min_tokens {self.min_tokens} > max_tokens {self.max_tokens}")
        top = self.base_freq + (self.vocab_size - 2) * self.freq_step
        if top >= SAMPLE_RATE / 2:
            raise ValueError(f"highest token tone {top} Hz is above the Nyquist frequency")
        return self

    def frequency(self, token: int) -> float:
        return self.base_freq + (token - 1) * self.freq_step


class ToyUtterance:
    """One rendered utterance."""

    def __init__(self, waveform: Waveform, clip: VideoClip, labels: List[int]):
        self.waveform = waveform
        self.clip = clip
        self.labels = labels


def render_tone(spec: ToyTaskSpec, token: int) -> np.ndarray:
    n = spec.token_frames * SAMPLES_PER_FRAME
    t = np.arange(n) / SAMPLE_RATE
    return spec.amplitude * np.hanning(n) * np.sin(2.0 * np.pi * spec.frequency(token) * t)


def render_pattern(spec: ToyTaskSpec, token: int) -> np.ndarray:
    """``frame_size`` square grating; orientation and period depend on the token."""
    size = spec.frame_size
    angle = np.pi * (token - 1) / max(spec.vocab_size - 1, 1)
    period = 3.0 + (token - 1) % 3
    y, x = np.mgrid[0:size, 0:size]
    phase = (np.cos(angle) * x + np.sin(angle) * y) * 2.0 * np.pi / period
    return (0.8 * np.sin(phase)).astype(np.float32)


def render_utterance(spec: ToyTaskSpec, labels: Sequence[int]) -> ToyUtterance:
    """Render a label sequence into audio and video of equal duration."""
    gap_audio = np.zeros(spec.gap_frames * SAMPLES_PER_FRAME)
    gap_video = np.zeros((spec.gap_frames, spec.frame_size, spec.frame_size), dtype=np.float32)
    audio = [gap_audio]
    video = [gap_video]
    for token in labels:
        audio += [render_tone(spec, token), gap_audio]
        pattern = render_pattern(spec, token)
        video += [np.repeat(pattern[None], spec.token_frames, axis=0), gap_video]
    return ToyUtterance(
        Waveform(np.concatenate(audio)), VideoClip(np.concatenate(video)), list(labels)
    )


def sample_labels(spec: ToyTaskSpec, rng: Rng) -> List[int]:
    k = int(rng.integers(spec.min_tokens, spec.max_tokens))
    return [int(t) for t in rng.integers(1, spec.vocab_size - 1, (k,))]


def make_toy_batch(
    spec: ToyTaskSpec, rng: Rng, batch_size: int = 4
) -> Tuple[List[Waveform], List[VideoClip], List[List[int]]]:
    """Draw ``batch_size`` random utterances; returns waveforms, clips and label sequences."""
    utterances = [render_utterance(spec, sample_labels(spec, rng)) for _ in range(batch_size)]
    return (
        [u.waveform for u in utterances],
        [u.clip for u in utterances],
        [u.labels for u in utterances],
    )


def _index_seed(seed: int, split: str, index: int) -> int:
    digest = hashlib.sha256(f"{seed}:{split}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class ToyDataset:
    """Indexable toy utterances; utterance ``i`` depends only on (seed, split, i)."""

    def __init__(self, spec: ToyTaskSpec, split: str = "train", size: int = 1000):
        self.spec = spec
        self.split = split
        self.size = size

    def __len__(self) -> int:
        return self.size

    def labels(self, index: int) -> List[int]:
        return sample_labels(self.spec, Rng(_index_seed(self.spec.seed, self.split, index)))

    def utterance(self, index: int) -> ToyUtterance:
        return render_utterance(self.spec, self.labels(index))

    def batch(self, indices: Sequence[int]) -> List[ToyUtterance]:
        return [self.utterance(i) for i in indices]

    def corpus(self) -> List[List[int]]:
        """Label sequences of every utterance (language-model training text)."""
        return [self.labels(i) for i in range(self.size)]


def babble_pool(spec: ToyTaskSpec, count: int = 24) -> List[Waveform]:
    """Utterances from a separate split, used to synthesize babble noise."""
    return [u.waveform for u in ToyDataset(spec, "babble", count).batch(range(count))]
