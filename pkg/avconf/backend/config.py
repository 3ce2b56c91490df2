"""
Declarative model configuration.

Field names of ``BranchConfig`` follow the back-end hyper-parameter table
(``blocks_per_stage``, ``stage_feature_dim``, ``stage_patch_size``, ``interctc_blocks``,
``conv_kernel_size``) so that config files read like the table they come from.
"""

import hashlib
import json
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

AttentionVariant = Literal["regular", "grouped", "patch"]
ModelKind = Literal["audio", "visual", "audio_visual"]


class AttentionConfig(BaseModel):
    """Multi-head self-attention settings."""

    model_config = ConfigDict(extra="forbid")

    d_model: int = Field(gt=0)
    heads: int = Field(4, gt=0)
    variant: AttentionVariant = "regular"
    group_size: int = Field(1, ge=1)
    patch_size: int = Field(1, ge=1)
    n_max: int = Field(1024, ge=1)
    relative_pos: bool = True

    @model_validator(mode="after")
    def _check_heads(self) -> "AttentionConfig":
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads


class ConformerBlockConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d_model: int = Field(gt=0)
    ffn_expansion: int = Field(4, ge=1)
    conv_kernel_size: int = Field(15, ge=1)
    attention: AttentionConfig
    dropout: float = Field(0.1, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_kernel(self) -> "ConformerBlockConfig":
        if self.conv_kernel_size % 2 == 0:
            raise ValueError(f"conv_kernel_size must be odd, got {self.conv_kernel_size}")
        if self.attention.d_model != self.d_model:
            raise ValueError("attention d_model differs from block d_model")
        return self


class StageConfig(BaseModel):
    """
    One stage of a back-end network.

    ``patch_size`` is the pooling factor for patch attention and the group size for
    grouped attention; regular attention ignores it.
    """

    model_config = ConfigDict(extra="forbid")

    num_blocks: int = Field(ge=1)
    d_model: int = Field(gt=0)
    attention: AttentionVariant = "patch"
    patch_size: int = Field(1, ge=1)
    downsample_at_entry: bool = False


class BranchConfig(BaseModel):
    """A back-end network: a list of stages with Inter-CTC placement."""

    model_config = ConfigDict(extra="forbid")

    blocks_per_stage: List[int]
    stage_feature_dim: List[int]
    stage_patch_size: Optional[List[int]] = None
    stage_attention: Optional[List[AttentionVariant]] = None
    interctc_blocks: List[int] = Field(default_factory=list)
    conv_kernel_size: int = 15
    attention_heads: int = 4
    downsample_first_stage: bool = False

    @model_validator(mode="after")
    def _check_stages(self) -> "BranchConfig":
        n = len(self.blocks_per_stage)
        if n == 0:
            raise ValueError("a branch needs at least one stage")
        for field in ("stage_feature_dim", "stage_patch_size", "stage_attention"):
            value = getattr(self, field)
            if value is not None and len(value) != n:
                raise ValueError(f"{field} has {len(value)} entries, expected {n}")
        if any(b < 1 for b in self.blocks_per_stage):
            raise ValueError(f"blocks_per_stage entries must be >= 1: {self.blocks_per_stage}")
        dims = self.stage_feature_dim
        if any(b < a for a, b in zip(dims, dims[1:])):
            raise ValueError(f"stage_feature_dim must be non-decreasing: {dims}")
        if any(d % self.attention_heads for d in dims):
            raise ValueError(f"stage dims {dims} not divisible by {self.attention_heads} heads")
        total = self.total_blocks
        for index in self.interctc_blocks:
            if not 1 <= index <= total:
                raise ValueError(f"interctc block {index} outside 1..{total}")
        return self

    @property
    def total_blocks(self) -> int:
        return sum(self.blocks_per_stage)

    @property
    def input_dim(self) -> int:
        return self.stage_feature_dim[0]

    @property
    def output_dim(self) -> int:
        return self.stage_feature_dim[-1]

    def stages(self) -> List[StageConfig]:
        n = len(self.blocks_per_stage)
        patches = self.stage_patch_size or [1] * n
        variants = self.stage_attention or ["patch"] * n
        return [
            StageConfig(
                num_blocks=blocks,
                d_model=dim,
                attention=variant,
                patch_size=patch,
                downsample_at_entry=(i > 0 or self.downsample_first_stage),
            )
            for i, (blocks, dim, patch, variant) in enumerate(
                zip(self.blocks_per_stage, self.stage_feature_dim, patches, variants)
            )
        ]


class AudioFrontendConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sample_rate: int = 16000
    n_fft: int = 512
    win_length: int = 400
    hop_length: int = 160
    n_mels: int = 80
    f_min: float = 0.0
    f_max: float = 8000.0
    stem_channels: int = Field(180, ge=1)
    freq_masks: int = Field(2, ge=0)
    freq_mask_width: int = Field(27, ge=0)
    time_masks: int = Field(5, ge=0)
    time_mask_ratio: float = Field(0.05, ge=0.0, le=1.0)


class VideoFrontendConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    frame_rate: int = 25
    crop_size: int = Field(88, ge=1)
    stem_channels: int = Field(64, ge=1)
    resnet_widths: List[int] = Field(default_factory=lambda: [64, 128, 256, 512])
    blocks_per_resnet_stage: int = Field(2, ge=1)
    temporal_mask_max: int = Field(10, ge=0)
    flip_average: bool = False

    @model_validator(mode="after")
    def _check_widths(self) -> "VideoFrontendConfig":
        if len(self.resnet_widths) == 0:
            raise ValueError("resnet_widths must not be empty")
        return self


class ModelConfig(BaseModel):
    """
    A complete model: front-ends, back-end branches and the audio-visual encoder.

    Which branches are present decides the model kind: ``audio`` alone, ``visual``
    alone, or all three of ``audio``, ``visual`` and ``audio_visual`` together.
    """

    model_config = ConfigDict(extra="forbid")

    vocab_size: int = Field(256, ge=2)
    audio: Optional[BranchConfig] = None
    visual: Optional[BranchConfig] = None
    audio_visual: Optional[BranchConfig] = None
    audio_frontend: AudioFrontendConfig = Field(default_factory=AudioFrontendConfig)
    video_frontend: VideoFrontendConfig = Field(default_factory=VideoFrontendConfig)
    interctc_enabled: bool = True
    interctc_weight: float = Field(0.5, ge=0.0, le=1.0)
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    ffn_expansion: int = Field(4, ge=1)
    n_max: int = Field(1024, ge=2)

    @model_validator(mode="after")
    def _check_branches(self) -> "ModelConfig":
        present = (self.audio is not None, self.visual is not None, self.audio_visual is not None)
        if present not in ((True, False, False), (False, True, False), (True, True, True)):
            raise ValueError(
                "model needs audio only, visual only, or audio + visual + audio_visual branches"
            )
        if self.audio_visual is not None:
            d = self.audio_visual.input_dim
            if self.audio.output_dim != d or self.visual.output_dim != d:
                raise ValueError(
                    f"branch outputs ({self.audio.output_dim}, {self.visual.output_dim}) "
                    f"must equal the audio_visual width {d}"
                )
        return self

    @property
    def kind(self) -> ModelKind:
        if self.audio_visual is not None:
            return "audio_visual"
        return "audio" if self.audio is not None else "visual"

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    @classmethod
    def full(cls, kind: ModelKind = "audio_visual", vocab_size: int = 256) -> "ModelConfig":
        """Full-size configuration (back-end hyper-parameter table, 80 mels, 88x88 lips)."""
        audio = BranchConfig(
            blocks_per_stage=[5, 6, 1],
            stage_feature_dim=[180, 256, 360],
            stage_patch_size=[3, 1, 1],
            interctc_blocks=[8, 11],
        )
        visual = BranchConfig(
            blocks_per_stage=[6, 1],
            stage_feature_dim=[256, 360],
            stage_patch_size=[1, 1],
            interctc_blocks=[3, 6],
        )
        fused = BranchConfig(
            blocks_per_stage=[5],
            stage_feature_dim=[360],
            stage_patch_size=[1],
            interctc_blocks=[2],
        )
        return cls._assemble(kind, vocab_size, audio, visual, fused)

    @classmethod
    def desk(cls, kind: ModelKind = "audio_visual", vocab_size: int = 12) -> "ModelConfig":
        """Small configuration that trains on the toy task in minutes."""
        audio = BranchConfig(
            blocks_per_stage=[1, 1, 1],
            stage_feature_dim=[64, 96, 128],
            stage_patch_size=[2, 1, 1],
            interctc_blocks=[2],
            attention_heads=4,
            conv_kernel_size=7,
        )
        visual = BranchConfig(
            blocks_per_stage=[2, 1],
            stage_feature_dim=[96, 128],
            stage_patch_size=[1, 1],
            interctc_blocks=[2],
            attention_heads=4,
            conv_kernel_size=7,
        )
        fused = BranchConfig(
            blocks_per_stage=[1],
            stage_feature_dim=[128],
            interctc_blocks=[],
            attention_heads=4,
            conv_kernel_size=7,
        )
        config = cls._assemble(kind, vocab_size, audio, visual, fused)
        config.audio_frontend = AudioFrontendConfig(stem_channels=8)
        config.video_frontend = VideoFrontendConfig(
            crop_size=16, stem_channels=8, resnet_widths=[8, 16, 16, 32]
        )
        config.n_max = 512
        return config

    @classmethod
    def _assemble(cls, kind, vocab_size, audio, visual, fused) -> "ModelConfig":
        if kind == "audio":
            return cls(vocab_size=vocab_size, audio=audio)
        if kind == "visual":
            return cls(vocab_size=vocab_size, visual=visual)
        return cls(vocab_size=vocab_size, audio=audio, visual=visual, audio_visual=fused)
