"""
Audio front-end.

Waveform (16 kHz) -> magnitude STFT (400-sample Hann window, hop 160, 512-point FFT)
-> 80-band log-mel filterbank -> strided 2D convolution stem -> per-frame projection.

The stem halves both the frequency and time axes, so a waveform of ``T_a`` samples
yields ``T_a // 320 + 1`` feature frames (20 ms rate).
"""

from pathlib import Path
from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile
from scipy.signal import get_window

from avconf.backend.config import AudioFrontendConfig
from avconf.core import ops
from avconf.core.errors import InputError
from avconf.core.rng import Rng
from avconf.core.tensor import Tensor
from avconf.nn.layers import Conv, Linear
from avconf.nn.module import Module

SAMPLE_RATE = 16000
LOG_FLOOR = 1e-6


class Waveform:
    """Mono audio at a fixed 16 kHz sample rate."""

    def __init__(self, samples: np.ndarray, sample_rate: int = SAMPLE_RATE):
        """
        Initialize waveform.

        Args:
            samples: 1-D float samples in [-1, 1]
            sample_rate: Must be 16000
        """
        samples = np.asarray(samples, dtype=np.float64)
        if sample_rate != SAMPLE_RATE:
            raise InputError(f"sample rate must be {SAMPLE_RATE} Hz, got {sample_rate}")
        if samples.ndim != 1:
            raise InputError(f"waveform must be mono (1-D), got shape {samples.shape}")
        if samples.size == 0:
            raise InputError("empty waveform")
        self.samples = samples
        self.sample_rate = sample_rate

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def read_wav(path: Union[str, Path]) -> Waveform:
    """
    Load a mono 16-bit PCM WAV file at 16 kHz.

    Raises:
        InputError: missing file, wrong rate, stereo or non-16-bit data
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"audio file not found: {path}")
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise InputError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} Hz")
    if data.ndim != 1:
        raise InputError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype != np.int16:
        raise InputError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    return Waveform(data.astype(np.float64) / 32768.0)


def write_wav(path: Union[str, Path], waveform: Waveform) -> None:
    pcm = np.clip(np.round(waveform.samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, waveform.sample_rate, pcm)


def num_frames(num_samples: int, hop_length: int = 160) -> int:
    """STFT frame count for a center-padded signal."""
    return num_samples // hop_length + 1


def stft(
    waveform: Waveform, n_fft: int = 512, win_length: int = 400, hop_length: int = 160
) -> Tensor:
    """
    Magnitude short-time Fourier transform.

    The signal is reflect-padded by ``win_length // 2`` on each side, framed with a
    periodic Hann window and transformed with an ``n_fft``-point real FFT.

    Returns:
        ``(n_fft // 2 + 1, T_a // hop + 1)`` non-negative magnitudes
    """
    samples = waveform.samples if isinstance(waveform, Waveform) else np.asarray(waveform)
    if samples.size == 0:
        raise InputError("empty waveform")
    half = win_length // 2
    padded = np.pad(samples, (half, half), mode="reflect")
    frames = sliding_window_view(padded, win_length)[::hop_length]
    window = get_window("hann", win_length, fftbins=True)
    spectrum = np.fft.rfft(frames * window, n=n_fft, axis=-1)
    return Tensor(np.abs(spectrum).T.astype(np.float32))


def _hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz) / 700.0)


def _mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int = 80,
    n_fft: int = 512,
    sample_rate: int = SAMPLE_RATE,
    f_min: float = 0.0,
    f_max: float = 8000.0,
) -> np.ndarray:
    """Triangular filters evenly spaced on the mel scale, shape ``(n_mels, n_fft // 2 + 1)``."""
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(f_min), _hz_to_mel(f_max), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (fft_freqs[None, :] - lower) / (center - lower)
    falling = (upper - fft_freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling)).astype(np.float32)


_FILTERBANKS = {}


def mel_project(spec: Tensor, config: Optional[AudioFrontendConfig] = None) -> Tensor:
    """
    Log-mel energies ``log(filterbank @ |X|^2 + 1e-6)``.

    The filterbank weights the power spectrum ``|X|^2``, not the magnitude ``|X|``.

    Returns:
        ``(n_mels, frames)``
    """
    config = config or AudioFrontendConfig()
    key = (config.n_mels, config.n_fft, config.sample_rate, config.f_min, config.f_max)
    if key not in _FILTERBANKS:
        _FILTERBANKS[key] = mel_filterbank(*key)
    power = np.asarray(spec.data, dtype=np.float64) ** 2
    return Tensor(np.log(_FILTERBANKS[key] @ power + LOG_FLOOR).astype(np.float32))


def log_mel(waveform: Waveform, config: Optional[AudioFrontendConfig] = None) -> Tensor:
    config = config or AudioFrontendConfig()
    spec = stft(waveform, config.n_fft, config.win_length, config.hop_length)
    return mel_project(spec, config)


def spec_augment(
    mel: Tensor, rng: Rng, training: bool, config: Optional[AudioFrontendConfig] = None
) -> Tensor:
    """
    Zero out random frequency bands and time spans.

    Two frequency masks of width ``U[0, 27]`` and five time masks of width
    ``U[0, 0.05 * frames]``. Eval mode returns the input unchanged.
    """
    if not training:
        return mel
    config = config or AudioFrontendConfig()
    out = np.array(mel.data, copy=True)
    n_mels, frames = out.shape
    for _ in range(config.freq_masks):
        width = int(rng.integers(0, min(config.freq_mask_width, n_mels)))
        start = int(rng.integers(0, n_mels - width))
        out[start : start + width, :] = 0.0
    max_time = int(config.time_mask_ratio * frames)
    for _ in range(config.time_masks):
        width = int(rng.integers(0, max_time))
        start = int(rng.integers(0, frames - width))
        out[:, start : start + width] = 0.0
    return Tensor(out)


class AudioStem(Module):
    """Conv2d 3x3 stride 2 (pad 1) -> swish -> channel-major flatten -> linear."""

    def __init__(self, config: AudioFrontendConfig, d_model: int, rng: Rng):
        super().__init__()
        self.conv = Conv(2, 1, config.stem_channels, 3, rng.spawn("conv"), stride=2, padding=1)
        self.freq_bins = (config.n_mels - 1) // 2 + 1
        self.proj = Linear(config.stem_channels * self.freq_bins, d_model, rng.spawn("proj"))

    def forward(self, mel: Tensor) -> Tensor:
        """``(n_mels, F)`` log-mel -> ``((F - 1) // 2 + 1, d_model)``."""
        n_mels, frames = mel.shape
        x = self.conv(mel.reshape(1, 1, n_mels, frames))
        x = ops.swish(x)
        _, channels, freq, time = x.shape
        x = x.reshape(channels, freq, time).transpose(2, 0, 1).reshape(time, channels * freq)
        return self.proj(x)


class AudioFrontend(Module):
    """Waveform features and the trainable stem."""

    def __init__(self, config: AudioFrontendConfig, d_model: int, rng: Rng):
        super().__init__()
        self.config = config
        self.stem = AudioStem(config, d_model, rng.spawn("stem"))

    def featurize(self, waveform: Waveform, rng: Optional[Rng] = None) -> Tensor:
        """Log-mel features, SpecAugment-ed in training mode."""
        mel = log_mel(waveform, self.config)
        if self.training and rng is not None:
            mel = spec_augment(mel, rng, True, self.config)
        return mel

    def forward(self, mel: Tensor) -> Tensor:
        return self.stem(mel)
