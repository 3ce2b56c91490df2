"""Audio and visual front-ends."""

from avconf.frontends.audio import AudioFrontend, Waveform, log_mel, read_wav, stft, write_wav
from avconf.frontends.video import VideoClip, VideoFrontend, read_clip, video_augment, write_clip

__all__ = [
    "AudioFrontend",
    "VideoClip",
    "VideoFrontend",
    "Waveform",
    "log_mel",
    "read_clip",
    "read_wav",
    "stft",
    "video_augment",
    "write_clip",
    "write_wav",
]
