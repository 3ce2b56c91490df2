"""Conformer back-end, fusion and model assembly."""

from avconf.backend.config import (
    AttentionConfig,
    BranchConfig,
    ConformerBlockConfig,
    ModelConfig,
    StageConfig,
)

__all__ = ["AttentionConfig", "BranchConfig", "ConformerBlockConfig", "ModelConfig", "StageConfig"]
