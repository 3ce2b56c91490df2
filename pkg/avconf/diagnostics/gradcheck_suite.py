"""
Registry of finite-difference gradient checks.

Every check builds a small float64 instance, contracts its output with fixed random
weights into a scalar and compares ``backward()`` with central differences. Checks are
grouped by module so one group can be run alone.
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from avconf.attention.mhsa import MultiHeadSelfAttention
from avconf.backend.config import (
    AttentionConfig,
    AudioFrontendConfig,
    BranchConfig,
    ConformerBlockConfig,
    ModelConfig,
)
from avconf.backend.conformer import ConformerBlock, Downsample, InterCtcModule
from avconf.backend.fusion import Fusion
from avconf.backend.model import AVConformer
from avconf.core import ops
from avconf.core.errors import UsageError
from avconf.core.gradcheck import DEFAULT_STEP, DEFAULT_TOLERANCE, check_gradients
from avconf.core.rng import Rng
from avconf.core.tensor import Tensor
from avconf.ctc.loss import ctc_loss, joint_loss
from avconf.frontends.audio import AudioStem
from avconf.frontends.video import BasicBlock, VideoStem
from avconf.nn.module import Module

logger = logging.getLogger(__name__)

# ReLU and max-pool kinks: a smaller step keeps perturbations from crossing them
KINK_STEP = 1e-5

CheckFn = Callable[[Rng], Dict[str, float]]

MODULES = ("numerics", "audio", "video", "attention", "backend", "ctc", "model")
CHECKS: Dict[str, Dict[str, CheckFn]] = {module: {} for module in MODULES}


def register(module: str, name: str):
    def wrap(fn: CheckFn) -> CheckFn:
        CHECKS[module][name] = fn
        return fn

    return wrap


class GradCheckResult:
    """Outcome of one check: per-leaf relative errors against a tolerance."""

    def __init__(
        self, module: str, name: str, trial: int, errors: Dict[str, float], tolerance: float
    ):
        self.module = module
        self.name = name
        self.trial = trial
        self.errors = errors
        self.tolerance = tolerance

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def to_dict(self) -> Dict:
        return {
            "module": self.module,
            "check": self.name,
            "trial": self.trial,
            "max_error": self.max_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "errors": self.errors,
        }


# ---------------------------------------------------------------------- helpers


def _leaf(rng: Rng, shape, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(shape, scale), requires_grad=True, dtype=np.float64)


def _contract(out: Tensor, weights: np.ndarray) -> Tensor:
    return (out * Tensor(weights, dtype=np.float64)).sum()


def _away_from_zero(rng: Rng, shape) -> np.ndarray:
    x = rng.normal(shape)
    return np.sign(x) * (0.1 + np.abs(x))


def _module_check(
    module: Module, rng: Rng, inputs: Sequence[Tensor], run, h: float = DEFAULT_STEP
) -> Dict[str, float]:
    """Check a module's inputs and parameters; ``run(*inputs)`` returns its output."""
    module.to_dtype(np.float64)
    weights = rng.normal(run(*inputs).shape)
    leaves = {f"input{i}": x for i, x in enumerate(inputs)}
    for name, p in module.named_parameters():
        p.requires_grad = True
        leaves[name] = p
    return check_gradients(
        lambda: _contract(run(*inputs), weights), leaves, h=h, max_elements=6, rng=rng
    )


# ---------------------------------------------------------------------- numerics


@register("numerics", "matmul")
def _check_matmul(rng: Rng) -> Dict[str, float]:
    a, b = _leaf(rng, (2, 3, 4)), _leaf(rng, (2, 4, 5))
    w = rng.normal((2, 3, 5))
    return check_gradients(lambda: _contract(ops.matmul(a, b), w), {"a": a, "b": b})


@register("numerics", "softmax")
def _check_softmax(rng: Rng) -> Dict[str, float]:
    x = _leaf(rng, (3, 5))
    w1, w2 = rng.normal((3, 5)), rng.normal((3, 5))
    return check_gradients(
        lambda: _contract(ops.softmax(x), w1) + _contract(ops.log_softmax(x), w2), {"x": x}
    )


@register("numerics", "layer_norm")
def _check_layer_norm(rng: Rng) -> Dict[str, float]:
    x, gamma, beta = _leaf(rng, (4, 6)), _leaf(rng, (6,)), _leaf(rng, (6,))
    w = rng.normal((4, 6))
    return check_gradients(
        lambda: _contract(ops.layer_norm(x, gamma, beta), w),
        {"x": x, "gamma": gamma, "beta": beta},
    )


@register("numerics", "batch_norm")
def _check_batch_norm(rng: Rng) -> Dict[str, float]:
    x, gamma, beta = _leaf(rng, (2, 3, 4)), _leaf(rng, (3,)), _leaf(rng, (3,))
    w = rng.normal((2, 3, 4))

    def loss():
        mean, var = np.zeros(3), np.ones(3)
        return _contract(ops.batch_norm(x, gamma, beta, mean, var, True), w)

    return check_gradients(loss, {"x": x, "gamma": gamma, "beta": beta})


@register("numerics", "conv")
def _check_conv(rng: Rng) -> Dict[str, float]:
    x1, w1 = _leaf(rng, (1, 4, 9)), _leaf(rng, (4, 1, 3))
    x2, w2 = _leaf(rng, (1, 2, 6, 5)), _leaf(rng, (3, 2, 3, 3))
    b2 = _leaf(rng, (3,))
    c1 = rng.normal((1, 4, 5))
    c2 = rng.normal((1, 3, 3, 3))

    def loss():
        depthwise = ops.conv(x1, w1, stride=2, padding=1, dims=1, groups=4)
        strided = ops.conv(x2, w2, stride=2, padding=1, dims=2, bias=b2)
        return _contract(depthwise, c1) + _contract(strided, c2)

    return check_gradients(loss, {"x1": x1, "w1": w1, "x2": x2, "w2": w2, "b2": b2})


@register("numerics", "pooling")
def _check_pooling(rng: Rng) -> Dict[str, float]:
    spaced = rng.permutation(2 * 6 * 6).reshape(1, 2, 6, 6) * 0.1
    x = Tensor(spaced, requires_grad=True, dtype=np.float64)
    seq = _leaf(rng, (7, 3))
    w1 = rng.normal((1, 2, 3, 3))
    w2 = rng.normal((7, 3))

    def loss():
        pooled = ops.max_pool(x, (3, 3), (2, 2), (1, 1))
        patch = ops.upsample_nearest1d(ops.avg_pool1d(seq, 3), 3, 7)
        return _contract(pooled, w1) + _contract(patch, w2)

    return check_gradients(loss, {"x": x, "seq": seq}, h=KINK_STEP)


@register("numerics", "elementwise")
def _check_elementwise(rng: Rng) -> Dict[str, float]:
    x = _leaf(rng, (3, 8))
    r = Tensor(_away_from_zero(rng, (3, 8)), requires_grad=True, dtype=np.float64)
    index = rng.integers(0, 3, (3, 2))
    w1, w2, w3, w4 = (rng.normal(s) for s in [(3, 8), (3, 4), (3, 8), (3, 2)])

    def loss():
        total = _contract(ops.swish(x), w1) + _contract(ops.glu(x, axis=-1), w2)
        total = total + _contract(ops.relu(r), w3) + _contract(ops.gather(x, index), w4)
        return total + _contract(ops.concat([x[:, :2], r[:, 2:]], axis=1), w1)

    return check_gradients(loss, {"x": x, "r": r})


# ---------------------------------------------------------------------- front-ends


@register("audio", "stem")
def _check_audio_stem(rng: Rng) -> Dict[str, float]:
    stem = AudioStem(AudioFrontendConfig(n_mels=8, stem_channels=2), 6, rng.spawn("stem"))
    mel = _leaf(rng, (8, 7))
    return _module_check(stem, rng, [mel], stem)


@register("video", "stem")
def _check_video_stem(rng: Rng) -> Dict[str, float]:
    stem = VideoStem(2, rng.spawn("stem"))
    frames = _leaf(rng, (3, 8, 8))
    return _module_check(stem, rng, [frames], stem, h=KINK_STEP)


@register("video", "basic_block")
def _check_basic_block(rng: Rng) -> Dict[str, float]:
    block = BasicBlock(2, 3, 2, rng.spawn("block"))
    x = _leaf(rng, (2, 2, 6, 6))
    return _module_check(block, rng, [x], block, h=KINK_STEP)


# ---------------------------------------------------------------------- attention


def _attention_check(rng: Rng, variant: str, size: int) -> Dict[str, float]:
    config = AttentionConfig(
        d_model=8,
        heads=2,
        variant=variant,
        group_size=size if variant == "grouped" else 1,
        patch_size=size if variant == "patch" else 1,
        n_max=64,
    )
    attention = MultiHeadSelfAttention(config, rng.spawn("mhsa"))
    x = _leaf(rng, (5, 8))
    return _module_check(attention, rng, [x], attention)


@register("attention", "regular")
def _check_regular(rng: Rng) -> Dict[str, float]:
    return _attention_check(rng, "regular", 1)


@register("attention", "grouped")
def _check_grouped(rng: Rng) -> Dict[str, float]:
    return _attention_check(rng, "grouped", 2)


@register("attention", "patch")
def _check_patch(rng: Rng) -> Dict[str, float]:
    return _attention_check(rng, "patch", 2)


# ---------------------------------------------------------------------- back-end


@register("backend", "conformer_block")
def _check_conformer_block(rng: Rng) -> Dict[str, float]:
    config = ConformerBlockConfig(
        d_model=16,
        conv_kernel_size=3,
        attention=AttentionConfig(d_model=16, heads=2, n_max=64),
        dropout=0.0,
    )
    block = ConformerBlock(config, rng.spawn("block"))
    x = _leaf(rng, (5, 16))
    return _module_check(block, rng, [x], block)


@register("backend", "downsample")
def _check_downsample(rng: Rng) -> Dict[str, float]:
    layer = Downsample(4, 6, 3, 0.0, rng.spawn("ds"))
    x = _leaf(rng, (5, 4))
    return _module_check(layer, rng, [x], layer)


@register("backend", "interctc")
def _check_interctc(rng: Rng) -> Dict[str, float]:
    module = InterCtcModule(4, 5, rng.spawn("inter"))
    x = _leaf(rng, (3, 4))
    return _module_check(module, rng, [x], lambda x: module(x)[1])


@register("backend", "fusion")
def _check_fusion(rng: Rng) -> Dict[str, float]:
    fusion = Fusion(8, rng.spawn("fusion"))
    a, v = _leaf(rng, (4, 8)), _leaf(rng, (4, 8))
    return _module_check(fusion, rng, [a, v], fusion)


# ---------------------------------------------------------------------- ctc


@register("ctc", "ctc_loss")
def _check_ctc_loss(rng: Rng) -> Dict[str, float]:
    logits = _leaf(rng, (5, 4))
    labels = [1, 3]
    return check_gradients(lambda: ctc_loss(ops.log_softmax(logits), labels), {"logits": logits})


@register("ctc", "joint_loss")
def _check_joint_loss(rng: Rng) -> Dict[str, float]:
    a, b = _leaf(rng, (6, 4)), _leaf(rng, (6, 4))

    def loss():
        final = ctc_loss(ops.log_softmax(a), [2, 2])
        inter = ctc_loss(ops.log_softmax(b), [1])
        return joint_loss(final, [inter], 0.5)

    return check_gradients(loss, {"a": a, "b": b})


# ---------------------------------------------------------------------- model


def tiny_config(vocab_size: int = 5) -> ModelConfig:
    """Audio-only model with two 16-wide stages of one block each."""
    branch = BranchConfig(
        blocks_per_stage=[1, 1],
        stage_feature_dim=[16, 16],
        stage_patch_size=[1, 1],
        interctc_blocks=[1],
        attention_heads=2,
        conv_kernel_size=3,
    )
    return ModelConfig(
        vocab_size=vocab_size,
        audio=branch,
        audio_frontend=AudioFrontendConfig(n_mels=8, stem_channels=2),
        dropout=0.0,
        n_max=64,
    )


@register("model", "end_to_end")
def _check_end_to_end(rng: Rng) -> Dict[str, float]:
    model = AVConformer(tiny_config(), rng.spawn("model")).to_dtype(np.float64)
    mel = _leaf(rng, (8, 13))
    labels = [1, 2]

    def loss():
        out = model.forward(mel, None, "ao")
        inters = [ctc_loss(z, labels) for _, z in out.inters]
        return joint_loss(ctc_loss(out.log_probs, labels), inters, 0.5)

    params = dict(model.named_parameters())
    names = sorted(params)
    chosen = [names[i] for i in sorted(rng.permutation(len(names))[:6])]
    leaves = {"mel": mel}
    for name in chosen:
        params[name].requires_grad = True
        leaves[name] = params[name]
    return check_gradients(loss, leaves, max_elements=4, rng=rng)


# ---------------------------------------------------------------------- runner


def run_suite(
    modules: Optional[Sequence[str]] = None,
    trials: int = 1,
    seed: int = 0,
    tolerance: float = DEFAULT_TOLERANCE,
) -> List[GradCheckResult]:
    """
    Run the registered checks.

    Args:
        modules: Module groups to run (default all)
        trials: Independent random instances per check
        seed: Base seed
        tolerance: Maximum allowed relative error

    Raises:
        UsageError: ``trials < 1`` or an unknown module name
    """
    if trials < 1:
        raise UsageError(f"trials must be >= 1, got {trials}")
    selected = list(modules) if modules else list(MODULES)
    unknown = [m for m in selected if m not in CHECKS]
    if unknown:
        raise UsageError(f"unknown module(s) {unknown}; choose from {', '.join(MODULES)}")
    root = Rng(seed)
    results = []
    for module in selected:
        for name, check in CHECKS[module].items():
            for trial in range(trials):
                errors = check(root.spawn(f"{module}.{name}.{trial}"))
                result = GradCheckResult(module, name, trial, errors, tolerance)
                logger.debug(
                    "grad check %s.%s trial=%d max_error=%.2e",
                    module,
                    name,
                    trial,
                    result.max_error,
                )
                results.append(result)
    return results
