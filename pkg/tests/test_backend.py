"""
Tests for Conformer blocks, downsampling stages, Inter-CTC modules, fusion and the model.
"""

import numpy as np
import pytest

from avconf.backend.config import (
    AttentionConfig,
    BranchConfig,
    ConformerBlockConfig,
    ModelConfig,
)
from avconf.backend.conformer import (
    ConformerBackend,
    ConformerBlock,
    InterCtcModule,
    downsampled_length,
    interctc_residual,
)
from avconf.backend.fusion import Fusion, align
from avconf.backend.model import AVConformer, check_mode
from avconf.core import ops
from avconf.core.errors import InputError, UsageError
from avconf.core.gradcheck import check_gradients
from avconf.core.rng import Rng
from avconf.core.tensor import Tensor
from avconf.frontends.audio import Waveform, log_mel
from avconf.nn.layers import BatchNorm


def _block(d=16, kernel=3, heads=2):
    config = ConformerBlockConfig(
        d_model=d,
        conv_kernel_size=kernel,
        attention=AttentionConfig(d_model=d, heads=heads),
        dropout=0.0,
    )
    return ConformerBlock(config, Rng(0))


def _inputs(seconds=1.0, crop=16, seed=0):
    rng = Rng(seed)
    mel = log_mel(Waveform(rng.uniform(-0.5, 0.5, (int(16000 * seconds),))))
    frames = Tensor(rng.uniform(-1, 1, (int(25 * seconds), crop, crop)))
    return mel, frames


def test_branch_config_validation():
    """Test the stage and Inter-CTC placement checks."""
    with pytest.raises(ValueError):
        BranchConfig(blocks_per_stage=[1, 1], stage_feature_dim=[16, 8])
    with pytest.raises(ValueError):
        BranchConfig(blocks_per_stage=[2], stage_feature_dim=[16], interctc_blocks=[3])
    with pytest.raises(ValueError):
        BranchConfig(blocks_per_stage=[1], stage_feature_dim=[10])
    with pytest.raises(ValueError):
        ConformerBlockConfig(d_model=8, conv_kernel_size=4, attention=AttentionConfig(d_model=8))


def test_model_config_branch_sets():
    """Test the allowed branch combinations and the hash."""
    branch = BranchConfig(blocks_per_stage=[1], stage_feature_dim=[8])
    with pytest.raises(ValueError):
        ModelConfig(audio=branch, visual=branch)
    assert ModelConfig(visual=branch).kind == "visual"
    assert ModelConfig.desk("audio").config_hash() == ModelConfig.desk("audio").config_hash()
    assert ModelConfig.desk("audio").config_hash() != ModelConfig.desk("visual").config_hash()


@pytest.mark.parametrize("n", [1, 4, 9])
@pytest.mark.parametrize("d", [8, 16])
def test_block_preserves_shape(n, d):
    """Test that a block maps (n, d) to (n, d)."""
    block = _block(d=d)
    block.eval()
    assert block(Tensor(Rng(n).normal((n, d)))).shape == (n, d)


def test_zero_init_block_is_layer_norm():
    """Test that zeroed residual projections leave only the final norm."""
    block = _block()
    block.zero_init_residual()
    block.eval()
    x = Tensor(Rng(1).normal((5, 16)))
    expected = ops.layer_norm(x, block.final_norm.gamma, block.final_norm.beta)
    assert np.allclose(block(x).data, expected.data, atol=1e-5)


def test_block_gradients():
    """Test a Conformer block against finite differences at n=5, d=16."""
    block = _block().to_dtype(np.float64)
    rng = Rng(2)
    x = Tensor(rng.normal((5, 16)), requires_grad=True, dtype=np.float64)
    weights = Tensor(rng.normal((5, 16)), dtype=np.float64)
    leaves = {"x": x, **dict(list(block.named_parameters())[::7])}
    errors = check_gradients(lambda: (block(x) * weights).sum(), leaves, max_elements=8, rng=rng)
    assert max(errors.values()) < 1e-3


def test_downsampled_length():
    """Test ceil-halving of the frame count."""
    assert [downsampled_length(n) for n in (1, 2, 3, 501, 251, 250)] == [1, 1, 2, 251, 126, 125]


def test_branch_output_lengths():
    """Test the 501 -> 251 -> 126 audio and 250 -> 125 visual chains."""

    def layout(blocks):
        branch = BranchConfig(
            blocks_per_stage=blocks, stage_feature_dim=[8] * len(blocks), attention_heads=2
        )
        return ConformerBackend("branch", branch, 8, 5, Rng(0))

    assert layout([5, 6, 1]).output_length(501) == 126
    assert layout([6, 1]).output_length(250) == 125
    assert layout([5]).output_length(125) == 125


@pytest.mark.parametrize("n", [1, 2, 7, 20])
def test_backend_forward_lengths(n):
    """Test that reported lengths follow the ceil-halving recurrence."""
    branch = BranchConfig(
        blocks_per_stage=[1, 1, 1],
        stage_feature_dim=[8, 8, 12],
        stage_patch_size=[2, 1, 1],
        attention_heads=2,
        conv_kernel_size=3,
    )
    backend = ConformerBackend("audio", branch, 8, 5, Rng(3), dropout=0.0)
    backend.eval()
    x, length, _ = backend(Tensor(Rng(n).normal((n, 8))))
    expected = downsampled_length(downsampled_length(n))
    assert length == expected == x.shape[0] == backend.output_length(n)
    assert x.shape[1] == 12


def test_batch_norm_sees_only_real_frames(monkeypatch):
    """Test that the padding of patch and grouped attention never reaches batch norm."""
    seen = []
    original = BatchNorm.forward

    def recording(self, x):
        seen.append(x.shape[0])
        return original(self, x)

    monkeypatch.setattr(BatchNorm, "forward", recording)
    branch = BranchConfig(
        blocks_per_stage=[1, 1],
        stage_feature_dim=[8, 8],
        stage_patch_size=[3, 3],
        stage_attention=["patch", "grouped"],
        attention_heads=2,
        conv_kernel_size=3,
    )
    backend = ConformerBackend("audio", branch, 8, 5, Rng(9), dropout=0.0)
    backend.train()
    backend(Tensor(Rng(10).normal((7, 8))))
    assert seen == [7, 4, 4]


def test_interctc_tags_follow_global_block_numbers():
    """Test Inter-CTC outputs after blocks 8 and 11 of a 5/6/1 layout."""
    branch = BranchConfig(
        blocks_per_stage=[5, 6, 1],
        stage_feature_dim=[8, 8, 8],
        interctc_blocks=[8, 11],
        attention_heads=2,
        conv_kernel_size=3,
    )
    backend = ConformerBackend("audio", branch, 8, 5, Rng(4), dropout=0.0)
    backend.eval()
    _, _, inters = backend(Tensor(Rng(5).normal((12, 8))))
    assert [tag for tag, _ in inters] == ["audio.8", "audio.11"]
    for _, log_z in inters:
        assert np.allclose(np.exp(log_z.data).sum(axis=-1), 1.0, atol=1e-6)


def test_interctc_modules_do_not_share_parameters():
    """Test distinct parameters per Inter-CTC module."""
    branch = BranchConfig(
        blocks_per_stage=[2], stage_feature_dim=[8], interctc_blocks=[1, 2], attention_heads=2
    )
    backend = ConformerBackend("visual", branch, 8, 5, Rng(6))
    first, second = backend.interctc
    assert not np.array_equal(first.to_vocab.weight.data, second.to_vocab.weight.data)


def test_interctc_residual():
    """Test row-stochastic posteriors and a neutral zero feedback."""
    module = InterCtcModule(6, 4, Rng(7))
    x = Tensor(Rng(8).normal((3, 6)))
    z, x_next = interctc_residual(x, module)
    assert np.allclose(z.data.sum(axis=-1), 1.0, atol=1e-6)
    module.from_vocab.weight.data[...] = 0.0
    module.from_vocab.bias.data[...] = 0.0
    assert np.allclose(interctc_residual(x, module)[1].data, x.data)


def test_fusion_and_alignment():
    """Test the fusion contract and the min-length alignment."""
    fusion = Fusion(8, Rng(9))
    a, v = Tensor(Rng(10).normal((4, 8))), Tensor(Rng(11).normal((4, 8)))
    assert fusion(a, v).shape == (4, 8)
    fusion.project.weight.data[...] = 0.0
    assert np.all(fusion(a, v).data == 0)
    with pytest.raises(InputError):
        fusion(a, Tensor(np.zeros((3, 8))))
    aligned = align(Tensor(np.zeros((126, 8))), Tensor(np.zeros((125, 8))))
    assert [t.shape[0] for t in aligned] == [125, 125]
    with pytest.raises(InputError):
        align(Tensor(np.zeros((10, 8))), Tensor(np.zeros((5, 8))))


def test_check_mode():
    """Test mode validation per model kind."""
    check_mode("audio_visual", "av-masked-audio")
    with pytest.raises(UsageError):
        check_mode("audio", "vo")
    with pytest.raises(UsageError):
        check_mode("audio", "both")


@pytest.mark.parametrize("kind,mode", [("audio", "ao"), ("visual", "vo"), ("audio_visual", "av")])
def test_model_forward_per_kind(kind, mode):
    """Test posteriors and lengths for every model kind."""
    model = AVConformer(ModelConfig.desk(kind), Rng(12))
    model.eval()
    mel, frames = _inputs()
    out = model.forward(mel if kind != "visual" else None, frames if kind != "audio" else None)
    assert out.log_probs.shape == (out.length, 12)
    assert np.allclose(out.posteriors.sum(axis=-1), 1.0, atol=1e-5)
    assert out.length == model.output_length(mel.shape[1], frames.shape[0])
    for _, log_z in out.inters:
        assert np.allclose(np.exp(log_z.data).sum(axis=-1), 1.0, atol=1e-5)
    assert model.modes[0] == mode


def test_audio_visual_model_tags_and_errors():
    """Test intermediate tags of the fused model and input checks."""
    model = AVConformer(ModelConfig.desk(), Rng(13))
    model.eval()
    mel, frames = _inputs()
    out = model.forward(mel, frames, "av")
    assert out.tags == ["audio.2", "visual.2"]
    with pytest.raises(UsageError):
        model.forward(None, None, "av")
    with pytest.raises(UsageError):
        model.forward(mel, None, "av")
    with pytest.raises(UsageError):
        model.forward(mel, frames, "ao")


def test_masked_modalities_equal_zero_inputs():
    """Test that masking a modality matches feeding zeros at a fresh model's input."""
    model = AVConformer(ModelConfig.desk(), Rng(14))
    model.eval()
    mel, frames = _inputs()
    masked = model.forward(mel, frames, "av-masked-video").log_probs.data
    zeros = model.forward(mel, Tensor(np.zeros(frames.shape)), "av").log_probs.data
    assert np.allclose(masked, zeros, atol=1e-6)
    masked = model.forward(mel, frames, "av-masked-audio").log_probs.data
    zeros = model.forward(Tensor(np.zeros(mel.shape)), frames, "av").log_probs.data
    assert np.allclose(masked, zeros, atol=1e-6)
    only_video = model.forward(None, frames, "av-masked-audio")
    assert only_video.length == model.output_length(mel.shape[1], frames.shape[0])


def test_zero_feedback_makes_interctc_neutral():
    """Test that zeroed Inter-CTC feedback leaves the final output unchanged."""
    with_inter = AVConformer(ModelConfig.desk("audio"), Rng(15))
    without = AVConformer(
        ModelConfig.desk("audio").model_copy(update={"interctc_enabled": False}), Rng(15)
    )
    for module in with_inter.audio_backend.interctc:
        module.from_vocab.weight.data[...] = 0.0
        module.from_vocab.bias.data[...] = 0.0
    with_inter.eval()
    without.eval()
    mel, _ = _inputs()
    assert np.allclose(
        with_inter.forward(mel).log_probs.data, without.forward(mel).log_probs.data, atol=1e-6
    )
    assert without.forward(mel).inters == []


def test_parameter_breakdown_groups():
    """Test that the breakdown sums to the model total."""
    model = AVConformer(ModelConfig.desk(), Rng(16))
    parts = model.parameter_breakdown()
    assert set(parts) == {
        "audio_frontend",
        "video_frontend",
        "audio_backend",
        "visual_backend",
        "fusion",
        "av_backend",
        "head",
    }
    assert sum(parts.values()) == model.num_parameters()
