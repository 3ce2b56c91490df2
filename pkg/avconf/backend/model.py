"""
Full audio, visual and audio-visual models.

An ``AVConformer`` is built from a ``ModelConfig``. Depending on which branches the
config defines it is an audio-only, visual-only or audio-visual model; the audio-visual
model fuses the two branch outputs and runs a shared encoder before the output head.
"""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from avconf.backend.config import ModelConfig
from avconf.backend.conformer import ConformerBackend
from avconf.backend.fusion import Fusion, align
from avconf.core import ops
from avconf.core.errors import UsageError
from avconf.core.rng import Rng
from avconf.core.tensor import Tensor
from avconf.frontends.audio import AudioFrontend, Waveform
from avconf.frontends.video import VideoClip, VideoFrontend
from avconf.nn.layers import Linear
from avconf.nn.module import Module

logger = logging.getLogger(__name__)

MODES = ("ao", "vo", "av", "av-masked-audio", "av-masked-video")

MODES_BY_KIND = {
    "audio": ("ao",),
    "visual": ("vo",),
    "audio_visual": ("av", "av-masked-audio", "av-masked-video"),
}


class ModelOutput:
    """Final log-posteriors, tagged intermediate log-posteriors and the output length."""

    def __init__(self, log_probs: Tensor, inters: List[Tuple[str, Tensor]], length: int):
        self.log_probs = log_probs
        self.inters = inters
        self.length = length

    @property
    def posteriors(self) -> np.ndarray:
        return np.exp(self.log_probs.data)

    @property
    def tags(self) -> List[str]:
        return [tag for tag, _ in self.inters]

    def to_dict(self) -> Dict:
        return {
            "length": self.length,
            "vocab_size": self.log_probs.shape[-1],
            "inter_tags": self.tags,
        }


def check_mode(kind: str, mode: str) -> None:
    """
    Raises:
        UsageError: unknown mode, or a mode the model kind cannot run
    """
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    if mode not in MODES_BY_KIND[kind]:
        allowed = ", ".join(MODES_BY_KIND[kind])
        raise UsageError(f"mode {mode!r} needs a different model; this {kind} model runs {allowed}")


def audio_stem_length(mel_frames: int) -> int:
    """Feature frames after the stride-2 audio stem."""
    return (mel_frames - 1) // 2 + 1


class AVConformer(Module):
    """Front-ends, Conformer back-end branches, optional fusion and the CTC output head."""

    def __init__(self, config: ModelConfig, rng: Rng):
        """
        Initialize model.

        Args:
            config: Model configuration
            rng: Stream used for all weight initialization
        """
        super().__init__()
        self.config = config
        self.kind = config.kind
        common = dict(
            vocab_size=config.vocab_size,
            dropout=config.dropout,
            ffn_expansion=config.ffn_expansion,
            n_max=config.n_max,
            interctc_enabled=config.interctc_enabled,
        )
        if config.audio is not None:
            d = config.audio.input_dim
            self.audio_frontend = AudioFrontend(config.audio_frontend, d, rng.spawn("audio_fe"))
            self.audio_backend = ConformerBackend(
                "audio", config.audio, d, rng=rng.spawn("audio_be"), **common
            )
        if config.visual is not None:
            d = config.visual.input_dim
            self.video_frontend = VideoFrontend(config.video_frontend, d, rng.spawn("video_fe"))
            self.visual_backend = ConformerBackend(
                "visual", config.visual, d, rng=rng.spawn("visual_be"), **common
            )
        if config.audio_visual is not None:
            d = config.audio_visual.input_dim
            self.fusion = Fusion(d, rng.spawn("fusion"), expansion=config.ffn_expansion)
            self.av_backend = ConformerBackend(
                "audio_visual", config.audio_visual, d, rng=rng.spawn("av_be"), **common
            )
            out_dim = config.audio_visual.output_dim
        elif config.audio is not None:
            out_dim = config.audio.output_dim
        else:
            out_dim = config.visual.output_dim
        self.head = Linear(out_dim, config.vocab_size, rng.spawn("head"))
        logger.debug(
            "model kind=%s params=%d hash=%s",
            self.kind,
            self.num_parameters(),
            config.config_hash()[:12],
        )

    @property
    def modes(self) -> Tuple[str, ...]:
        return MODES_BY_KIND[self.kind]

    def parameter_breakdown(self) -> Dict[str, int]:
        """Parameter counts of the front-ends, back-end branches, fusion and head."""
        parts = {}
        for name in (
            "audio_frontend",
            "video_frontend",
            "audio_backend",
            "visual_backend",
            "fusion",
            "av_backend",
            "head",
        ):
            if hasattr(self, name):
                parts[name] = getattr(self, name).num_parameters()
        return parts

    def _audio_features(self, mel: Optional[Tensor], masked: bool, video_len: int) -> Tensor:
        d = self.config.audio.input_dim
        if not masked:
            return self.audio_frontend(mel)
        n = audio_stem_length(mel.shape[1]) if mel is not None else 2 * video_len + 1
        return Tensor(np.zeros((n, d), dtype=self.head.weight.dtype))

    def _video_features(self, frames: Optional[Tensor], masked: bool, audio_len: int) -> Tensor:
        d = self.config.visual.input_dim
        if not masked:
            return self.video_frontend(frames)
        n = frames.shape[0] if frames is not None else max(1, audio_len // 2)
        return Tensor(np.zeros((n, d), dtype=self.head.weight.dtype))

    def _head(self, x: Tensor, length: int, inters: List[Tuple[str, Tensor]]) -> ModelOutput:
        return ModelOutput(ops.log_softmax(self.head(x), axis=-1), inters, length)

    def forward(
        self, mel: Optional[Tensor] = None, frames: Optional[Tensor] = None, mode: str = None
    ) -> ModelOutput:
        """
        Run the model on precomputed features.

        Args:
            mel: ``(n_mels, F)`` log-mel features, or None
            frames: ``(T_v, crop, crop)`` lip frames, or None
            mode: ``ao``, ``vo``, ``av``, ``av-masked-audio`` or ``av-masked-video``;
                defaults to the model's primary mode

        Returns:
            Final log-posteriors, intermediate log-posteriors tagged ``<branch>.<block>``,
            and the number of output frames

        Raises:
            UsageError: both inputs absent, a required input absent, or a bad mode
        """
        if mel is None and frames is None:
            raise UsageError("model needs audio, video or both; got neither")
        mode = mode or self.modes[0]
        check_mode(self.kind, mode)

        if mode == "ao":
            x, length, inters = self.audio_backend(self.audio_frontend(_need(mel, "audio")))
            return self._head(x, length, inters)
        if mode == "vo":
            x, length, inters = self.visual_backend(self.video_frontend(_need(frames, "video")))
            return self._head(x, length, inters)

        if mode == "av":
            _need(mel, "audio")
            _need(frames, "video")
        masked_audio = mode == "av-masked-audio"
        masked_video = mode == "av-masked-video"
        if masked_audio:
            video_in = self._video_features(_need(frames, "video"), False, 0)
            audio_in = self._audio_features(mel, True, video_in.shape[0])
        else:
            audio_in = self._audio_features(_need(mel, "audio"), False, 0)
            video_in = self._video_features(frames, masked_video, audio_in.shape[0])

        a, _, audio_inters = self.audio_backend(audio_in)
        v, _, visual_inters = self.visual_backend(video_in)
        a, v = align(a, v)
        x, length, av_inters = self.av_backend(self.fusion(a, v))
        return self._head(x, length, audio_inters + visual_inters + av_inters)

    def encode(
        self,
        waveform: Optional[Waveform] = None,
        clip: Optional[VideoClip] = None,
        mode: Optional[str] = None,
        rng: Optional[Rng] = None,
    ) -> ModelOutput:
        """Featurize raw inputs (augmenting them in training mode when ``rng`` is given) and run."""
        mel = None
        frames = None
        if waveform is not None and hasattr(self, "audio_frontend"):
            mel = self.audio_frontend.featurize(waveform, rng)
        if clip is not None and hasattr(self, "video_frontend"):
            frames = self.video_frontend.featurize(clip, rng)
        return self.forward(mel, frames, mode)

    def output_length(self, mel_frames: Optional[int] = None, video_frames: Optional[int] = None):
        """Output frame count predicted from input lengths, without running the model."""
        lengths = []
        if mel_frames is not None and hasattr(self, "audio_backend"):
            lengths.append(self.audio_backend.output_length(audio_stem_length(mel_frames)))
        if video_frames is not None and hasattr(self, "visual_backend"):
            lengths.append(self.visual_backend.output_length(video_frames))
        if not lengths:
            raise UsageError("output_length needs at least one input length")
        n = min(lengths)
        if hasattr(self, "av_backend"):
            n = self.av_backend.output_length(n)
        return n


def _need(value, what: str):
    if value is None:
        raise UsageError(f"this mode needs {what} input")
    return value
