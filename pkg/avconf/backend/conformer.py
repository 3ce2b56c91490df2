"""
Conformer blocks, downsampling stages and Inter-CTC residual modules.

A back-end network (``ConformerBackend``) is a list of stages. Every stage after the
first starts with a stride-2 convolution module that halves the frame rate and widens
the features; then it runs its Conformer blocks. Blocks are numbered 1..N across all
stages of a branch, and the blocks listed in ``interctc_blocks`` are followed by an
Inter-CTC residual module.

The back-end runs one utterance at a time: a batch holds a single unpadded sequence,
so batch-norm statistics never include padding frames. Batches of several utterances
are formed by gradient accumulation in the trainer.
"""

import math
from typing import List, Optional, Tuple

import numpy as np

from avconf.attention.mhsa import MultiHeadSelfAttention
from avconf.backend.config import AttentionConfig, BranchConfig, ConformerBlockConfig, StageConfig
from avconf.core import ops
from avconf.core.errors import InputError, UsageError
from avconf.core.rng import Rng
from avconf.core.tensor import Tensor
from avconf.nn.layers import BatchNorm, Conv, Dropout, LayerNorm, Linear
from avconf.nn.module import Module, ModuleList


def _depthwise(x: Tensor, conv: Conv) -> Tensor:
    """Apply a channel-wise 1D conv to a time-major ``(n, d)`` sequence."""
    n, d = x.shape
    y = conv(x.transpose(1, 0).reshape(1, d, n))
    return y.reshape(d, y.shape[-1]).transpose(1, 0)


class FeedForward(Module):
    """LayerNorm -> linear d->e*d -> swish -> dropout -> linear e*d->d -> dropout."""

    def __init__(self, d: int, expansion: int, dropout: float, rng: Rng):
        super().__init__()
        self.norm = LayerNorm(d)
        self.expand = Linear(d, expansion * d, rng.spawn("expand"))
        self.project = Linear(expansion * d, d, rng.spawn("project"))
        self.dropout = Dropout(dropout, rng.spawn("dropout"))

    def forward(self, x: Tensor) -> Tensor:
        hidden = self.dropout(ops.swish(self.expand(self.norm(x))))
        return self.dropout(self.project(hidden))


class ConvModule(Module):
    """
    Convolution module: LayerNorm -> pointwise d->2d -> GLU -> depthwise conv
    -> BatchNorm -> swish -> pointwise -> dropout.

    With ``stride=2`` and ``d_out > d_in`` the same structure halves the sequence and
    widens it; that form opens every downsampling stage.
    """

    def __init__(
        self, d_in: int, d_out: int, kernel: int, dropout: float, rng: Rng, stride: int = 1
    ):
        super().__init__()
        self.norm = LayerNorm(d_in)
        self.pointwise_in = Linear(d_in, 2 * d_out, rng.spawn("pointwise_in"))
        self.depthwise = Conv(
            1,
            d_out,
            d_out,
            kernel,
            rng.spawn("depthwise"),
            stride=stride,
            padding=kernel // 2,
            groups=d_out,
        )
        self.bn = BatchNorm(d_out, axis=1)
        self.pointwise_out = Linear(d_out, d_out, rng.spawn("pointwise_out"))
        self.dropout = Dropout(dropout, rng.spawn("dropout"))

    def forward(self, x: Tensor) -> Tensor:
        h = ops.glu(self.pointwise_in(self.norm(x)), axis=-1)
        h = _depthwise(h, self.depthwise)
        h = ops.swish(self.bn(h))
        return self.dropout(self.pointwise_out(h))


class ConformerBlock(Module):
    """Macaron block: x + FFN/2 -> + MHSA -> + Conv -> + FFN/2 -> LayerNorm."""

    def __init__(self, config: ConformerBlockConfig, rng: Rng):
        super().__init__()
        d = config.d_model
        self.config = config
        self.ffn_first = FeedForward(d, config.ffn_expansion, config.dropout, rng.spawn("ffn1"))
        self.attention_norm = LayerNorm(d)
        self.attention = MultiHeadSelfAttention(config.attention, rng.spawn("mhsa"))
        self.attention_dropout = Dropout(config.dropout, rng.spawn("mhsa_dropout"))
        self.conv = ConvModule(d, d, config.conv_kernel_size, config.dropout, rng.spawn("conv"))
        self.ffn_second = FeedForward(d, config.ffn_expansion, config.dropout, rng.spawn("ffn2"))
        self.final_norm = LayerNorm(d)

    def zero_init_residual(self) -> None:
        """Zero the last projection of every residual branch."""
        for layer in (
            self.ffn_first.project,
            self.ffn_second.project,
            self.attention.out,
            self.conv.pointwise_out,
        ):
            layer.weight.data[...] = 0.0
            layer.bias.data[...] = 0.0

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        x = x + 0.5 * self.ffn_first(x)
        x = x + self.attention_dropout(self.attention(self.attention_norm(x), mask))
        x = x + self.conv(x)
        x = x + 0.5 * self.ffn_second(x)
        return self.final_norm(x)


class Downsample(Module):
    """Stride-2 convolution module on the main path, pooled linear projection on the skip."""

    def __init__(self, d_in: int, d_out: int, kernel: int, dropout: float, rng: Rng):
        super().__init__()
        self.conv = ConvModule(d_in, d_out, kernel, dropout, rng.spawn("conv"), stride=2)
        self.skip = Linear(d_in, d_out, rng.spawn("skip"))

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x) + self.skip(ops.avg_pool1d(x, 2))


def downsampled_length(n: int) -> int:
    """Sequence length after one stride-2 stage entry."""
    return math.ceil(n / 2)


class InterCtcModule(Module):
    """Intermediate CTC prediction fed back into the hidden stream."""

    def __init__(self, d: int, vocab_size: int, rng: Rng):
        super().__init__()
        self.to_vocab = Linear(d, vocab_size, rng.spawn("to_vocab"))
        self.from_vocab = Linear(vocab_size, d, rng.spawn("from_vocab"))

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """
        Returns:
            ``(log_posteriors, x_next)`` with ``x_next = x + from_vocab(softmax(to_vocab(x)))``
        """
        log_z = ops.log_softmax(self.to_vocab(x), axis=-1)
        return log_z, x + self.from_vocab(log_z.exp())


def interctc_residual(x: Tensor, module: InterCtcModule) -> Tuple[Tensor, Tensor]:
    """Posteriors ``Z`` (row-stochastic) and the residual update ``x + Linear(Z)``."""
    log_z, x_next = module(x)
    return log_z.exp(), x_next


class Stage(Module):
    """Optional downsampling entry followed by Conformer blocks."""

    def __init__(
        self,
        config: StageConfig,
        d_in: int,
        branch: BranchConfig,
        dropout: float,
        ffn_expansion: int,
        n_max: int,
        rng: Rng,
    ):
        super().__init__()
        self.config = config
        d = config.d_model
        if config.downsample_at_entry:
            self.downsample = Downsample(d_in, d, branch.conv_kernel_size, dropout, rng.spawn("ds"))
        elif d_in != d:
            self.project = Linear(d_in, d, rng.spawn("project"))
        attention = AttentionConfig(
            d_model=d,
            heads=branch.attention_heads,
            variant=config.attention,
            group_size=config.patch_size if config.attention == "grouped" else 1,
            patch_size=config.patch_size if config.attention == "patch" else 1,
            n_max=n_max,
        )
        block = ConformerBlockConfig(
            d_model=d,
            ffn_expansion=ffn_expansion,
            conv_kernel_size=branch.conv_kernel_size,
            attention=attention,
            dropout=dropout,
        )
        self.blocks = ModuleList(
            [ConformerBlock(block, rng.spawn("block")) for _ in range(config.num_blocks)]
        )

    def enter(self, x: Tensor, length: int) -> Tuple[Tensor, int]:
        """Downsample (or project) at stage entry; returns the new length."""
        if self.config.downsample_at_entry:
            length = downsampled_length(length)
            if length == 0:
                raise InputError("sequence length dropped to 0 after downsampling")
            return self.downsample(x), length
        if hasattr(self, "project"):
            return self.project(x), length
        return x, length

    def forward(self, *args, **kwargs):
        raise UsageError("Stage is a container and has no forward(); see ConformerBackend")


class ConformerBackend(Module):
    """One back-end branch with its Inter-CTC residual modules."""

    def __init__(
        self,
        name: str,
        branch: BranchConfig,
        d_in: int,
        vocab_size: int,
        rng: Rng,
        dropout: float = 0.1,
        ffn_expansion: int = 4,
        n_max: int = 1024,
        interctc_enabled: bool = True,
    ):
        """
        Initialize a branch.

        Args:
            name: Tag prefix for intermediate posteriors (``audio``, ``visual``, ...)
            branch: Stage layout and Inter-CTC placement
            d_in: Width of the incoming features
            vocab_size: CTC vocabulary size (blank included)
            rng: Stream for weight initialization
            dropout: Dropout probability inside blocks
            ffn_expansion: Feed-forward expansion factor
            n_max: Relative position range of the attention layers
            interctc_enabled: Whether to build the Inter-CTC modules
        """
        super().__init__()
        self.name = name
        self.branch = branch
        self.stages = ModuleList()
        width = d_in
        for stage_config in branch.stages():
            stage = Stage(
                stage_config, width, branch, dropout, ffn_expansion, n_max, rng.spawn("stage")
            )
            self.stages.append(stage)
            width = stage_config.d_model
        self.interctc_blocks = sorted(branch.interctc_blocks) if interctc_enabled else []
        self.interctc = ModuleList()
        widths = [s.d_model for s in branch.stages() for _ in range(s.num_blocks)]
        for index in self.interctc_blocks:
            self.interctc.append(InterCtcModule(widths[index - 1], vocab_size, rng.spawn("inter")))

    def stage_forward(self, x: Tensor, length: int, stage: Stage, first_block: int, inters: list):
        """
        Run one stage; ``first_block`` is the global number of its first block.

        ``length`` is the frame count of the single sequence in ``x``.
        """
        x, length = stage.enter(x, length)
        for offset, block in enumerate(stage.blocks):
            number = first_block + offset
            x = block(x)
            if number in self.interctc_blocks:
                module = self.interctc[self.interctc_blocks.index(number)]
                log_z, x = module(x)
                inters.append((f"{self.name}.{number}", log_z))
        return x, length

    def forward(self, x: Tensor) -> Tuple[Tensor, int, List[Tuple[str, Tensor]]]:
        """
        Returns:
            ``(features, length, [(tag, log_posteriors), ...])``
        """
        length = x.shape[0]
        inters: List[Tuple[str, Tensor]] = []
        first = 1
        for stage in self.stages:
            x, length = self.stage_forward(x, length, stage, first, inters)
            first += len(stage.blocks)
        return x, length, inters

    def output_length(self, n: int) -> int:
        for stage in self.branch.stages():
            if stage.downsample_at_entry:
                n = downsampled_length(n)
        return n
