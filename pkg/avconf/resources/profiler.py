"""
Analytic parameter and FLOP accounting for a ``ModelConfig``.

Counts follow ``FLOP_CONVENTION``. Sequence lengths come from the same formulas the
model uses (stem halving, ceil-halving at every downsampling stage, min-length alignment
before fusion), so nothing is instantiated. ``cross_check`` builds the model and compares
parameter counts exactly.
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple

from avconf.attention.complexity import FLOP_CONVENTION, attention_flops
from avconf.backend.config import (
    AttentionConfig,
    BranchConfig,
    ModelConfig,
    VideoFrontendConfig,
)
from avconf.core.errors import ParameterError
from avconf.frontends.audio import SAMPLE_RATE
from avconf.frontends.video import FRAME_RATE

FRONTENDS = ("audio_frontend", "video_frontend")


class CostRecord:
    """Parameters and FLOPs of one module."""

    def __init__(self, name: str, params: int, flops: int):
        self.name = name
        self.params = params
        self.flops = flops

    @property
    def group(self) -> str:
        return self.name.split(".", 1)[0]

    def to_dict(self) -> Dict:
        return {"name": self.name, "params": self.params, "flops": self.flops}


class CostReport:
    """Per-module records for one input duration, with totals and subtotals."""

    def __init__(self, records: List[CostRecord], input_seconds: float, config_hash: str = ""):
        self.records = records
        self.input_seconds = input_seconds
        self.config_hash = config_hash
        self.convention = FLOP_CONVENTION

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.records)

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.records)

    def by_group(self) -> Dict[str, Tuple[int, int]]:
        """``group -> (params, flops)``; groups match ``AVConformer.parameter_breakdown``."""
        groups: Dict[str, Tuple[int, int]] = {}
        for r in self.records:
            params, flops = groups.get(r.group, (0, 0))
            groups[r.group] = (params + r.params, flops + r.flops)
        return groups

    def subtotals(self) -> Dict[str, Dict[str, int]]:
        """Front-end and back-end totals (fusion and head count as back-end)."""
        out = {"frontend": {"params": 0, "flops": 0}, "backend": {"params": 0, "flops": 0}}
        for r in self.records:
            part = out["frontend" if r.group in FRONTENDS else "backend"]
            part["params"] += r.params
            part["flops"] += r.flops
        return out

    def record(self, name: str) -> CostRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> Dict:
        return {
            "convention": self.convention,
            "input_seconds": self.input_seconds,
            "config_hash": self.config_hash,
            "records": [r.to_dict() for r in self.records],
            "totals": {"params": self.total_params, "flops": self.total_flops},
            "subtotals": self.subtotals(),
        }

    def to_table(self) -> str:
        """Human-readable fixed-width table."""
        width = max([len(r.name) for r in self.records] + [10])
        lines = [
            f"# {self.convention}",
            f"# input_seconds={self.input_seconds:g} config_hash={self.config_hash}",
            f"{'module':<{width}}  {'params':>12}  {'GFLOPs':>10}",
        ]
        for r in self.records:
            lines.append(f"{r.name:<{width}}  {r.params:>12,}  {r.flops / 1e9:>10.4f}")
        for name, part in self.subtotals().items():
            lines.append(f"{name:<{width}}  {part['params']:>12,}  {part['flops'] / 1e9:>10.4f}")
        lines.append(
            f"{'total':<{width}}  {self.total_params:>12,}  {self.total_flops / 1e9:>10.4f}"
        )
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        """Tab-separated ``name params flops`` records."""
        lines = [f"# {self.convention}", f"# config_hash={self.config_hash}"]
        lines.append("name\tparams\tflops")
        lines += [f"{r.name}\t{r.params}\t{r.flops}" for r in self.records]
        lines.append(f"total\t{self.total_params}\t{self.total_flops}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------- layer formulas


def linear_cost(n: int, d_in: int, d_out: int, bias: bool = True) -> Tuple[int, int]:
    return d_in * d_out + (d_out if bias else 0), n * d_in * d_out


def conv_cost(
    positions: int, in_ch: int, out_ch: int, kernel: Sequence[int], groups: int = 1, bias=True
) -> Tuple[int, int]:
    taps = math.prod(kernel) * (in_ch // groups)
    return out_ch * taps + (out_ch if bias else 0), positions * out_ch * taps


def _conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


class _Accumulator:
    def __init__(self):
        self.records: List[CostRecord] = []

    def add(self, name: str, *costs: Tuple[int, int], params: int = 0) -> None:
        total_params = params + sum(c[0] for c in costs)
        total_flops = sum(c[1] for c in costs)
        self.records.append(CostRecord(name, total_params, total_flops))


def _conv_module(n_in: int, d_in: int, d_out: int, kernel: int, stride: int):
    """Pointwise-GLU, depthwise, BN, pointwise; returns (params, flops, n_out)."""
    n_out = _conv_out(n_in, kernel, stride, kernel // 2)
    costs = [
        linear_cost(n_in, d_in, 2 * d_out),
        conv_cost(n_out, d_out, d_out, (kernel,), groups=d_out),
        linear_cost(n_out, d_out, d_out),
    ]
    params = 2 * d_in + 2 * d_out + sum(c[0] for c in costs)
    return params, sum(c[1] for c in costs), n_out


def _attention(config: AttentionConfig, n: int) -> Tuple[int, int]:
    d = config.d_model
    params = 4 * (d * d + d) + (d * d if config.relative_pos else 0)
    return params, attention_flops(config, n, include_rel_pos=config.relative_pos)


def _branch(
    acc: _Accumulator,
    prefix: str,
    branch: BranchConfig,
    d_in: int,
    n: int,
    config: ModelConfig,
) -> int:
    """Add stage, block and Inter-CTC records; returns the output length."""
    e = config.ffn_expansion
    k = branch.conv_kernel_size
    inter = set(branch.interctc_blocks) if config.interctc_enabled else set()
    number = 0
    width = d_in
    for s, stage in enumerate(branch.stages(), start=1):
        d = stage.d_model
        if stage.downsample_at_entry:
            params, flops, n_out = _conv_module(n, width, d, k, 2)
            skip = linear_cost(n_out, width, d)
            acc.add(f"{prefix}.stage{s}.downsample", (params, flops), skip)
            n = n_out
        elif width != d:
            acc.add(f"{prefix}.stage{s}.project", linear_cost(n, width, d))
        width = d
        attention = AttentionConfig(
            d_model=d,
            heads=branch.attention_heads,
            variant=stage.attention,
            group_size=stage.patch_size if stage.attention == "grouped" else 1,
            patch_size=stage.patch_size if stage.attention == "patch" else 1,
            n_max=config.n_max,
        )
        for _ in range(stage.num_blocks):
            number += 1
            name = f"{prefix}.stage{s}.block{number}"
            ffn = (linear_cost(n, d, e * d), linear_cost(n, e * d, d))
            acc.add(f"{name}.ffn", *ffn, *ffn, params=4 * d)
            acc.add(f"{name}.mhsa", _attention(attention, n), params=2 * d)
            params, flops, _ = _conv_module(n, d, d, k, 1)
            acc.add(f"{name}.conv", (params, flops))
            acc.add(f"{name}.norm", params=2 * d)
            if number in inter:
                acc.add(
                    f"{prefix}.interctc{number}",
                    linear_cost(n, d, config.vocab_size),
                    linear_cost(n, config.vocab_size, d),
                )
    return n


def _audio_frontend(acc: _Accumulator, config: ModelConfig, seconds: float) -> int:
    fe = config.audio_frontend
    samples = int(round(seconds * SAMPLE_RATE))
    frames = samples // fe.hop_length + 1
    n = _conv_out(frames, 3, 2, 1)
    freq = _conv_out(fe.n_mels, 3, 2, 1)
    acc.add("audio_frontend.stem.conv", conv_cost(n * freq, 1, fe.stem_channels, (3, 3)))
    acc.add(
        "audio_frontend.stem.proj",
        linear_cost(n, fe.stem_channels * freq, config.audio.input_dim),
    )
    return n


def _video_frontend(acc: _Accumulator, config: ModelConfig, seconds: float) -> int:
    fe: VideoFrontendConfig = config.video_frontend
    t = int(round(seconds * FRAME_RATE))
    size = _conv_out(fe.crop_size, 7, 2, 3)
    stem = conv_cost(t * size * size, 1, fe.stem_channels, (5, 7, 7), bias=False)
    acc.add("video_frontend.stem", stem, params=2 * fe.stem_channels)
    size = _conv_out(size, 3, 2, 1)
    channels = fe.stem_channels
    block = 0
    for stage, width in enumerate(fe.resnet_widths):
        for index in range(fe.blocks_per_resnet_stage):
            block += 1
            stride = 2 if stage > 0 and index == 0 else 1
            out = _conv_out(size, 3, stride, 1)
            positions = t * out * out
            costs = [
                conv_cost(positions, channels, width, (3, 3), bias=False),
                conv_cost(positions, width, width, (3, 3), bias=False),
            ]
            norms = 4 * width
            if stride != 1 or channels != width:
                costs.append(conv_cost(positions, channels, width, (1, 1), bias=False))
                norms += 2 * width
            acc.add(f"video_frontend.resnet.block{block}", *costs, params=norms)
            channels, size = width, out
    acc.add("video_frontend.proj", linear_cost(t, channels, config.visual.input_dim))
    return t


def profile(config: ModelConfig, input_seconds: float = 10.0) -> CostReport:
    """
    Parameter and FLOP counts of every module for a clip of ``input_seconds``.

    Raises:
        ParameterError: non-positive duration
    """
    if input_seconds <= 0:
        raise ParameterError(f"input_seconds must be > 0, got {input_seconds}")
    acc = _Accumulator()
    lengths = []
    if config.audio is not None:
        n = _audio_frontend(acc, config, input_seconds)
        d = config.audio.input_dim
        lengths.append(_branch(acc, "audio_backend", config.audio, d, n, config))
    if config.visual is not None:
        n = _video_frontend(acc, config, input_seconds)
        d = config.visual.input_dim
        lengths.append(_branch(acc, "visual_backend", config.visual, d, n, config))
    n = min(lengths)
    if config.audio_visual is not None:
        d = config.audio_visual.input_dim
        e = config.ffn_expansion
        acc.add("fusion", linear_cost(n, 2 * d, e * d), linear_cost(n, e * d, d))
        n = _branch(acc, "av_backend", config.audio_visual, d, n, config)
        d_out = config.audio_visual.output_dim
    elif config.audio is not None:
        d_out = config.audio.output_dim
    else:
        d_out = config.visual.output_dim
    acc.add("head", linear_cost(n, d_out, config.vocab_size))
    return CostReport(acc.records, input_seconds, config.config_hash())


def cross_check(config: ModelConfig, report: Optional[CostReport] = None) -> Dict[str, Tuple]:
    """
    Compare analytic parameter counts with an instantiated model.

    Returns:
        ``group -> (analytic, instantiated)`` for every group that differs (empty when equal)
    """
    from avconf.backend.model import AVConformer
    from avconf.core.rng import Rng

    report = report or profile(config)
    built = AVConformer(config, Rng(0)).parameter_breakdown()
    analytic = {group: params for group, (params, _) in report.by_group().items()}
    return {
        group: (analytic.get(group, 0), built.get(group, 0))
        for group in sorted(set(analytic) | set(built))
        if analytic.get(group, 0) != built.get(group, 0)
    }


def parse_variant(text: str) -> Tuple[str, int]:
    """``regular``, ``grouped:3`` or ``patch:3`` (width and heads filled in by the caller)."""
    name, _, size = text.partition(":")
    if name not in ("regular", "grouped", "patch"):
        raise ParameterError(f"unknown attention variant {text!r}")
    size = int(size) if size else 1
    return name, size


def sweep(
    d_model: int,
    variants: Sequence[str],
    n_range: Sequence[int],
    heads: int = 4,
    include_rel_pos: bool = False,
) -> List[Dict]:
    """
    FLOPs of one attention layer per (variant, n).

    Args:
        d_model: Feature width
        variants: Variant specs such as ``regular``, ``grouped:3``, ``patch:3``
        n_range: Sequence lengths

    Returns:
        ``len(variants) * len(n_range)`` records ``{variant, n, flops}``
    """
    if len(n_range) == 0:
        raise ParameterError("sweep needs at least one sequence length")
    records = []
    for text in variants:
        name, size = parse_variant(text)
        config = AttentionConfig(
            d_model=d_model,
            heads=heads,
            variant=name,
            group_size=size if name == "grouped" else 1,
            patch_size=size if name == "patch" else 1,
        )
        for n in n_range:
            flops = attention_flops(config, int(n), include_rel_pos)
            records.append({"variant": text, "n": int(n), "flops": flops})
    return records


def sweep_to_text(records: Sequence[Dict]) -> str:
    lines = [f"# {FLOP_CONVENTION}", "variant\tn\tflops"]
    lines += [f"{r['variant']}\t{r['n']}\t{r['flops']}" for r in records]
    return "\n".join(lines) + "\n"
