"""
Visual front-end.

Grayscale lip crops (25 fps) -> 3D convolution stem -> per-frame ResNet-18 trunk ->
global average pooling -> linear projection. No temporal downsampling: every input
frame yields one feature vector (40 ms rate).
"""

from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from avconf.backend.config import VideoFrontendConfig
from avconf.core import ops
from avconf.core.errors import InputError
from avconf.core.rng import Rng
from avconf.core.tensor import Tensor
from avconf.nn.layers import BatchNorm, Conv, Linear
from avconf.nn.module import Module, ModuleList

FRAME_RATE = 25
CLIP_MAGIC = b"AVCL"


class VideoClip:
    """Grayscale frames ``(T_v, H, W)`` scaled to [-1, 1] at 25 fps."""

    def __init__(self, frames: np.ndarray, frame_rate: int = FRAME_RATE):
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim != 3:
            raise InputError(f"clip must be (T, H, W), got shape {frames.shape}")
        if frames.shape[0] == 0:
            raise InputError("clip has no frames")
        if frames.size and (frames.min() < -1.0 or frames.max() > 1.0):
            raise InputError("clip values must lie within [-1, 1]")
        self.frames = frames
        self.frame_rate = frame_rate

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.frame_rate


def write_clip(path: Union[str, Path], clip: VideoClip) -> None:
    """Store a clip as ``AVCL`` + (T, H, W) u32 little-endian + uint8 frames."""
    pixels = np.clip(np.round((clip.frames + 1.0) * 127.5), 0, 255).astype(np.uint8)
    header = CLIP_MAGIC + np.asarray(pixels.shape, dtype="<u4").tobytes()
    Path(path).write_bytes(header + pixels.tobytes())


def read_clip(path: Union[str, Path]) -> VideoClip:
    """Load an ``AVCL`` clip, rescaling pixels with ``x / 127.5 - 1``."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"clip file not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != CLIP_MAGIC:
        raise InputError(f"{path}: not a clip file (bad magic)")
    t, h, w = (int(v) for v in np.frombuffer(blob[4:16], dtype="<u4"))
    expected = t * h * w
    if len(blob) - 16 != expected:
        raise InputError(f"{path}: expected {expected} pixel bytes, found {len(blob) - 16}")
    pixels = np.frombuffer(blob[16:], dtype=np.uint8).reshape(t, h, w)
    return VideoClip(pixels.astype(np.float32) / 127.5 - 1.0)


def central_crop(frames: np.ndarray, size: int) -> np.ndarray:
    _, h, w = frames.shape
    if h < size or w < size:
        raise InputError(f"clip {h}x{w} smaller than crop {size}x{size}")
    top, left = (h - size) // 2, (w - size) // 2
    return frames[:, top : top + size, left : left + size]


def video_augment(
    clip: VideoClip,
    rng: Optional[Rng],
    training: bool,
    config: Optional[VideoFrontendConfig] = None,
) -> np.ndarray:
    """
    Crop (and in training, mask and flip) a clip.

    Training: one temporal mask of ``U[0, temporal_mask_max]`` frames per second of
    video, a random ``crop_size`` crop, and a horizontal flip with probability 0.5.
    Eval: the central crop.

    Returns:
        ``(T_v, crop_size, crop_size)`` frames
    """
    config = config or VideoFrontendConfig()
    size = config.crop_size
    frames = clip.frames
    if not training:
        return central_crop(frames, size)

    t, h, w = frames.shape
    if h < size or w < size:
        raise InputError(f"clip {h}x{w} smaller than crop {size}x{size}")
    out = np.array(frames, copy=True)
    for start in range(0, t, config.frame_rate):
        segment = min(config.frame_rate, t - start)
        width = int(rng.integers(0, min(config.temporal_mask_max, segment)))
        offset = int(rng.integers(0, segment - width))
        out[start + offset : start + offset + width] = 0.0
    top = int(rng.integers(0, h - size))
    left = int(rng.integers(0, w - size))
    out = out[:, top : top + size, left : left + size]
    if rng.random() < 0.5:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def eval_views(clip: VideoClip, config: Optional[VideoFrontendConfig] = None) -> List[np.ndarray]:
    """Central crop, plus its mirror image when flip averaging is enabled."""
    config = config or VideoFrontendConfig()
    crop = central_crop(clip.frames, config.crop_size)
    if config.flip_average:
        return [crop, np.ascontiguousarray(crop[:, :, ::-1])]
    return [crop]


class VideoStem(Module):
    """Conv3d 5x7x7 stride (1,2,2), no bias -> BN -> ReLU -> MaxPool (1,3,3) stride (1,2,2)."""

    def __init__(self, channels: int, rng: Rng):
        super().__init__()
        self.conv = Conv(
            3, 1, channels, (5, 7, 7), rng, stride=(1, 2, 2), padding=(2, 3, 3), bias=False
        )
        self.bn = BatchNorm(channels, axis=1)

    def forward(self, frames: Tensor) -> Tensor:
        """``(T, H, W)`` -> ``(T, C, H', W')`` (time-major)."""
        if frames.shape[0] == 0:
            raise InputError("clip has no frames")
        t, h, w = frames.shape
        x = self.conv(frames.reshape(1, 1, t, h, w))
        x = ops.relu(self.bn(x))
        x = ops.max_pool(x, (1, 3, 3), (1, 2, 2), (0, 1, 1))
        return x.reshape(x.shape[1:]).transpose(1, 0, 2, 3)


class BasicBlock(Module):
    """Two 3x3 convolutions with a residual shortcut (1x1 projection when shapes change)."""

    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: Rng):
        super().__init__()
        self.conv1 = Conv(
            2, in_channels, out_channels, 3, rng, stride=stride, padding=1, bias=False
        )
        self.bn1 = BatchNorm(out_channels)
        self.conv2 = Conv(2, out_channels, out_channels, 3, rng, padding=1, bias=False)
        self.bn2 = BatchNorm(out_channels)
        self.shortcut: Optional[Conv] = None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = Conv(2, in_channels, out_channels, 1, rng, stride=stride, bias=False)
            self.shortcut_bn = BatchNorm(out_channels)

    def zero_init_residual(self) -> None:
        """Zero the last normalization scale so the block starts as its shortcut."""
        self.bn2.gamma.data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        out = ops.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = x if self.shortcut is None else self.shortcut_bn(self.shortcut(x))
        return ops.relu(out + skip)


class ResNet18(Module):
    """Per-frame 2D residual trunk: four stages of two basic blocks, then global pooling."""

    def __init__(self, in_channels: int, widths: List[int], blocks_per_stage: int, rng: Rng):
        super().__init__()
        self.blocks = ModuleList()
        channels = in_channels
        for stage, width in enumerate(widths):
            for index in range(blocks_per_stage):
                stride = 2 if stage > 0 and index == 0 else 1
                self.blocks.append(BasicBlock(channels, width, stride, rng.spawn("block")))
                channels = width
        self.out_channels = channels

    def trajectory(self, x: Tensor) -> List[tuple]:
        """Output shape after every block (used to check the stage geometry)."""
        shapes = []
        for block in self.blocks:
            x = block(x)
            shapes.append(x.shape)
        return shapes

    def forward(self, x: Tensor) -> Tensor:
        """``(T, C, H, W)`` -> ``(T, out_channels)``."""
        for block in self.blocks:
            x = block(x)
        return x.mean(axis=(2, 3))


class VideoFrontend(Module):
    """Stem, ResNet-18 trunk and a linear projection to the back-end width."""

    def __init__(self, config: VideoFrontendConfig, d_model: int, rng: Rng):
        super().__init__()
        self.config = config
        self.stem = VideoStem(config.stem_channels, rng.spawn("stem"))
        self.resnet = ResNet18(
            config.stem_channels,
            config.resnet_widths,
            config.blocks_per_resnet_stage,
            rng.spawn("resnet"),
        )
        self.proj = Linear(self.resnet.out_channels, d_model, rng.spawn("proj"))

    def featurize(self, clip: VideoClip, rng: Optional[Rng] = None) -> Tensor:
        return Tensor(video_augment(clip, rng, self.training and rng is not None, self.config))

    def forward(self, frames: Tensor) -> Tensor:
        """``(T, crop, crop)`` -> ``(T, d_model)``."""
        return self.proj(self.resnet(self.stem(frames)))
