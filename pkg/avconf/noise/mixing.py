"""
Additive noise at a target signal-to-noise ratio.

Noise is scaled so that ``10 * log10(P_signal / P_noise) == snr_db`` with ``P`` the mean
square over the utterance, added to the signal and clipped to [-1, 1].
"""

import math
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from avconf.core.errors import InputError, ParameterError
from avconf.core.rng import Rng
from avconf.frontends.audio import Waveform, read_wav

BABBLE_TALKERS = 6


class NoiseSource(ABC):
    """Base class for noise generators."""

    def __init__(self, name: str, params: Optional[Dict[str, float]] = None):
        self.name = name
        self.params = params or {}

    @abstractmethod
    def generate(self, num_samples: int, rng: Rng) -> np.ndarray:
        """
        Draw noise.

        Args:
            num_samples: Length of the signal to cover
            rng: Random stream

        Returns:
            1-D float64 array of ``num_samples`` samples
        """
        pass

    def __repr__(self) -> str:
        if self.params:
            params_str = ", ".join(f"{k}={v}" for k, v in self.params.items())
            return f"{self.name}({params_str})"
        return self.name


def _tile(samples: np.ndarray, num_samples: int) -> np.ndarray:
    reps = math.ceil(num_samples / samples.size)
    return np.tile(samples, reps)[:num_samples]


class WhiteNoise(NoiseSource):
    """Gaussian white noise."""

    def __init__(self):
        super().__init__("White")

    def generate(self, num_samples: int, rng: Rng) -> np.ndarray:
        return rng.normal((num_samples,))


class WaveformNoise(NoiseSource):
    """A recorded noise waveform, tiled when shorter than the signal."""

    def __init__(self, noise: Waveform):
        super().__init__("Waveform", {"samples": len(noise)})
        self.samples = noise.samples

    def generate(self, num_samples: int, rng: Rng) -> np.ndarray:
        return _tile(self.samples, num_samples)


class BabbleNoise(NoiseSource):
    """Sum of randomly chosen, randomly shifted utterances (a babble stand-in)."""

    def __init__(self, utterances: Sequence[Waveform], talkers: int = BABBLE_TALKERS):
        if not utterances:
            raise ParameterError("babble noise needs at least one utterance")
        if talkers < 1:
            raise ParameterError(f"talker count must be >= 1, got {talkers}")
        super().__init__("Babble", {"talkers": talkers})
        self.utterances: List[np.ndarray] = [u.samples for u in utterances]
        self.talkers = talkers

    def generate(self, num_samples: int, rng: Rng) -> np.ndarray:
        out = np.zeros(num_samples)
        for _ in range(self.talkers):
            samples = self.utterances[int(rng.integers(0, len(self.utterances) - 1))]
            shift = int(rng.integers(0, samples.size - 1))
            out += _tile(np.roll(samples, shift), num_samples)
        return out


class NoiseMixSpec(BaseModel):
    """Noise type and target SNR; ``snr_db = inf`` leaves the signal untouched."""

    model_config = ConfigDict(extra="forbid")

    source: Literal["white", "babble", "file"] = "white"
    snr_db: float = 0.0
    path: Optional[str] = None

    @field_validator("snr_db")
    @classmethod
    def _check_snr(cls, value: float) -> float:
        if math.isnan(value) or value == -math.inf:
            raise ValueError(f"SNR must be a number or +inf, got {value}")
        return value


def make_source(spec: NoiseMixSpec, babble: Optional[Sequence[Waveform]] = None) -> NoiseSource:
    """Build the noise source a spec names (babble needs a pool of utterances)."""
    if spec.source == "white":
        return WhiteNoise()
    if spec.source == "babble":
        if not babble:
            raise InputError("babble noise needs a pool of utterances")
        return BabbleNoise(babble)
    if spec.path is None:
        raise InputError("file noise needs a path")
    return WaveformNoise(read_wav(Path(spec.path)))


def power(samples: np.ndarray) -> float:
    return float(np.mean(np.square(samples)))


class MixResult:
    """Mixed waveform plus the applied noise scale and the fraction of clipped samples."""

    def __init__(self, waveform: Waveform, scale: float, clip_fraction: float, snr_db: float):
        self.waveform = waveform
        self.scale = scale
        self.clip_fraction = clip_fraction
        self.snr_db = snr_db

    def to_dict(self) -> Dict:
        return {"scale": self.scale, "clip_fraction": self.clip_fraction, "snr_db": self.snr_db}


def noise_scale(signal_power: float, noise_power: float, snr_db: float) -> float:
    """Factor that brings ``noise_power`` to ``snr_db`` below ``signal_power``."""
    return math.sqrt(signal_power / (noise_power * 10.0 ** (snr_db / 10.0)))


def mix_noise(
    signal: Waveform, spec: NoiseMixSpec, rng: Rng, source: Optional[NoiseSource] = None
) -> MixResult:
    """
    Add noise to a waveform at ``spec.snr_db``.

    Args:
        signal: Clean waveform
        spec: Noise type and SNR
        rng: Random stream for the noise draw
        source: Explicit noise source (default: built from ``spec``; babble needs one)

    Raises:
        InputError: zero-power signal or noise
    """
    if spec.snr_db == math.inf:
        return MixResult(signal, 0.0, 0.0, math.inf)
    signal_power = power(signal.samples)
    if signal_power == 0.0:
        raise InputError("cannot mix noise into a zero-power signal")
    source = source or make_source(spec)
    noise = source.generate(len(signal), rng)
    noise_power = power(noise)
    if noise_power == 0.0:
        raise InputError(f"{source!r} produced zero-power noise")
    scale = noise_scale(signal_power, noise_power, spec.snr_db)
    mixed = signal.samples + scale * noise
    clipped = np.abs(mixed) > 1.0
    mixed = np.clip(mixed, -1.0, 1.0)
    return MixResult(
        Waveform(mixed, signal.sample_rate), scale, float(clipped.mean()), spec.snr_db
    )


def measured_snr(clean: np.ndarray, mixed: np.ndarray) -> float:
    """SNR in dB of a mixture against its clean signal."""
    return 10.0 * math.log10(power(clean) / power(np.asarray(mixed) - clean))
