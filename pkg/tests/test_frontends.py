"""
Tests for the audio and visual front-ends.
"""

import numpy as np
import pytest

from avconf.backend.config import AudioFrontendConfig, VideoFrontendConfig
from avconf.core.errors import InputError
from avconf.core.rng import Rng
from avconf.core.tensor import Tensor
from avconf.frontends.audio import (
    AudioFrontend,
    AudioStem,
    Waveform,
    log_mel,
    mel_filterbank,
    mel_project,
    read_wav,
    spec_augment,
    stft,
    write_wav,
)
from avconf.frontends.video import (
    BasicBlock,
    ResNet18,
    VideoClip,
    VideoFrontend,
    VideoStem,
    eval_views,
    read_clip,
    video_augment,
    write_clip,
)


def _sine(hz, n=16000):
    return Waveform(0.5 * np.sin(2 * np.pi * hz * np.arange(n) / 16000))


def test_waveform_validation():
    """Test rate, rank and emptiness checks."""
    with pytest.raises(InputError):
        Waveform(np.zeros(10), sample_rate=8000)
    with pytest.raises(InputError):
        Waveform(np.zeros((10, 2)))
    with pytest.raises(InputError):
        Waveform(np.zeros(0))
    assert Waveform(np.zeros(8000)).duration == 0.5


def test_stft_shape_and_silence():
    """Test the 10 s frame count and zero magnitudes for silence."""
    spec = stft(Waveform(np.zeros(160000)))
    assert spec.shape == (257, 1001)
    assert np.all(spec.data == 0)


def test_stft_sine_peak_bin():
    """Test that a 1 kHz tone peaks at bin 32 in every interior frame."""
    spec = stft(_sine(1000.0)).data
    assert np.all(spec >= 0)
    assert np.all(np.argmax(spec[:, 2:-2], axis=0) == 32)


def test_filterbank_rows():
    """Test filterbank shape and positive row sums."""
    bank = mel_filterbank()
    assert bank.shape == (80, 257)
    assert np.all(bank.sum(axis=1) > 0)


def test_mel_project_floor():
    """Test that a silent spectrum maps to log(1e-6)."""
    mel = mel_project(Tensor(np.zeros((257, 4))))
    assert mel.shape == (80, 4)
    assert np.allclose(mel.data, np.log(1e-6))


def test_mel_project_uses_power():
    """Test that doubling the magnitude raises every mel energy by log 4."""
    magnitude = np.full((257, 3), 100.0)
    quiet = mel_project(Tensor(magnitude)).data
    loud = mel_project(Tensor(2.0 * magnitude)).data
    assert np.allclose(loud - quiet, np.log(4.0), atol=1e-4)


def test_log_mel_finite_on_noise():
    """Test finite features over random white noise."""
    rng = Rng(0)
    for _ in range(20):
        mel = log_mel(Waveform(rng.uniform(-1, 1, (1600,))))
        assert np.all(np.isfinite(mel.data))


@pytest.mark.parametrize("samples", [1600, 3200, 160000, 160001])
def test_audio_frontend_frame_contract(samples):
    """Test T_a // 320 + 1 output frames of width 180."""
    frontend = AudioFrontend(AudioFrontendConfig(), 180, Rng(1))
    frontend.eval()
    out = frontend(frontend.featurize(Waveform(np.zeros(samples))))
    assert out.shape == (samples // 320 + 1, 180)


def test_spec_augment_masks():
    """Test eval identity, bounded frequency masking and determinism."""
    mel = Tensor(np.ones((80, 200)))
    assert spec_augment(mel, Rng(0), training=False) is mel
    for seed in range(10):
        out = spec_augment(mel, Rng(seed), training=True).data
        assert out.shape == mel.shape
        assert np.sum(np.all(out == 0, axis=1)) <= 2 * 27
    first = spec_augment(mel, Rng(3), training=True).data
    second = spec_augment(mel, Rng(3), training=True).data
    assert np.array_equal(first, second)


def test_audio_stem_small_shape():
    """Test the stem on a tiny filterbank."""
    stem = AudioStem(AudioFrontendConfig(n_mels=8, stem_channels=2), 6, Rng(2))
    assert stem(Tensor(np.zeros((8, 7)))).shape == (4, 6)


def test_wav_round_trip(tmp_path):
    """Test 16-bit PCM storage and the sample-rate check."""
    path = tmp_path / "tone.wav"
    write_wav(path, _sine(440.0, 800))
    loaded = read_wav(path)
    assert len(loaded) == 800
    assert np.max(np.abs(loaded.samples - _sine(440.0, 800).samples)) < 1e-4
    with pytest.raises(InputError):
        read_wav(tmp_path / "missing.wav")


def test_clip_validation_and_file(tmp_path):
    """Test value range checks and the clip file format."""
    with pytest.raises(InputError):
        VideoClip(np.full((2, 4, 4), 2.0))
    with pytest.raises(InputError):
        VideoClip(np.zeros((0, 4, 4)))
    clip = VideoClip(Rng(0).uniform(-1, 1, (3, 5, 6)))
    path = tmp_path / "clip.avcl"
    write_clip(path, clip)
    assert np.max(np.abs(read_clip(path).frames - clip.frames)) <= 1 / 127.5
    path.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(InputError):
        read_clip(path)


def test_eval_views_central_crop():
    """Test the (4, 4) offset of an 88 crop from 96 x 96 and the flip view."""
    frames = Rng(1).uniform(-1, 1, (2, 96, 96))
    views = eval_views(VideoClip(frames))
    assert len(views) == 1
    assert np.array_equal(views[0], frames[:, 4:92, 4:92].astype(np.float32))
    flipped = eval_views(VideoClip(frames), VideoFrontendConfig(flip_average=True))
    assert np.array_equal(flipped[1], flipped[0][:, :, ::-1])


def test_video_augment_masks_and_determinism():
    """Test at most ten masked frames per second and seeded reproducibility."""
    clip = VideoClip(np.full((60, 96, 96), 0.5))
    with pytest.raises(InputError):
        video_augment(VideoClip(np.zeros((1, 40, 40))), Rng(0), True)
    for seed in range(5):
        out = video_augment(clip, Rng(seed), True)
        assert out.shape == (60, 88, 88)
        masked = np.all(out == 0, axis=(1, 2))
        for start in range(0, 60, 25):
            assert masked[start : start + 25].sum() <= 10
    assert np.array_equal(
        video_augment(clip, Rng(9), True), video_augment(clip, Rng(9), True)
    )


def test_video_stem_shape_and_zero_clip():
    """Test the 88 -> 22 stem geometry and the zero output of a silent clip."""
    stem = VideoStem(64, Rng(0))
    out = stem(Tensor(np.zeros((2, 88, 88))))
    assert out.shape == (2, 64, 22, 22)
    assert np.all(out.data == 0)


def test_resnet_trajectory():
    """Test the per-block spatial trajectory 22 -> 22 -> 11 -> 6 -> 3."""
    resnet = ResNet18(64, [64, 128, 256, 512], 2, Rng(1))
    shapes = resnet.trajectory(Tensor(Rng(2).normal((1, 64, 22, 22))))
    assert [s[1:] for s in shapes[1::2]] == [
        (64, 22, 22),
        (128, 11, 11),
        (256, 6, 6),
        (512, 3, 3),
    ]


def test_basic_block_zero_init_is_shortcut():
    """Test that a zero final scale reduces the block to relu(shortcut)."""
    block = BasicBlock(4, 4, 1, Rng(3))
    block.zero_init_residual()
    x = Tensor(Rng(4).normal((2, 4, 5, 5)))
    assert np.allclose(block(x).data, np.maximum(x.data, 0))


def test_video_frontend_parameters_and_shape():
    """Test the 11.3M parameter budget and one output per input frame."""
    frontend = VideoFrontend(VideoFrontendConfig(), 256, Rng(5))
    assert abs(frontend.num_parameters() - 11.3e6) / 11.3e6 < 0.02
    small = VideoFrontend(
        VideoFrontendConfig(crop_size=16, stem_channels=4, resnet_widths=[4, 8]), 12, Rng(6)
    )
    small.eval()
    clip = VideoClip(np.zeros((3, 20, 20)))
    assert small(small.featurize(clip)).shape == (3, 12)
