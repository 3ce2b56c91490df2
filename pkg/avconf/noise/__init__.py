"""Noise sources and SNR-controlled mixing."""

from avconf.noise.mixing import (
    BabbleNoise,
    MixResult,
    NoiseMixSpec,
    NoiseSource,
    WaveformNoise,
    WhiteNoise,
    make_source,
    measured_snr,
    mix_noise,
)

__all__ = [
    "BabbleNoise",
    "MixResult",
    "NoiseMixSpec",
    "NoiseSource",
    "WaveformNoise",
    "WhiteNoise",
    "make_source",
    "measured_snr",
    "mix_noise",
]
