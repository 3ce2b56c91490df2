"""
Tests for modules and standard layers.
"""

import numpy as np
import pytest

from avconf.core.errors import ManifestMismatchError, ParameterError, UsageError
from avconf.core.gradcheck import check_gradients
from avconf.core.rng import Rng
from avconf.core.tensor import Tensor
from avconf.nn.layers import BatchNorm, Conv, Dropout, LayerNorm, Linear
from avconf.nn.module import Module, ModuleList


class TwoLayer(Module):
    def __init__(self, rng):
        super().__init__()
        self.first = Linear(4, 3, rng.spawn("first"))
        self.norm = BatchNorm(3, axis=-1)
        self.second = Linear(3, 2, rng.spawn("second"), bias=False)

    def forward(self, x):
        return self.second(self.norm(self.first(x)))


def test_linear_shapes_and_init_bounds():
    """Test weight layout and the uniform fan-in bound."""
    layer = Linear(16, 5, Rng(0))
    assert layer.weight.shape == (16, 5)
    assert np.all(np.abs(layer.weight.data) <= np.sqrt(1 / 16))
    assert np.all(layer.bias.data == 0)
    assert layer(Tensor(np.zeros((7, 16)))).shape == (7, 5)


def test_conv_layer_validation():
    """Test dims and group checks."""
    with pytest.raises(ParameterError):
        Conv(4, 1, 1, 3, Rng(0))
    with pytest.raises(ParameterError):
        Conv(1, 3, 4, 3, Rng(0), groups=2)
    depthwise = Conv(1, 6, 6, 5, Rng(0), padding=2, groups=6)
    assert depthwise.weight.shape == (6, 1, 5)
    assert depthwise(Tensor(np.zeros((1, 6, 9)))).shape == (1, 6, 9)


def test_named_parameters_and_buffers():
    """Test dotted names and parameter counts."""
    model = TwoLayer(Rng(1))
    names = [name for name, _ in model.named_parameters()]
    assert names == [
        "first.weight",
        "first.bias",
        "norm.gamma",
        "norm.beta",
        "second.weight",
    ]
    assert [name for name, _ in model.named_buffers()] == [
        "norm.running_mean",
        "norm.running_var",
    ]
    assert model.num_parameters() == 4 * 3 + 3 + 3 + 3 + 3 * 2


def test_train_eval_propagates():
    """Test that eval() reaches every submodule."""
    model = TwoLayer(Rng(2))
    model.eval()
    assert not model.norm.training
    model.train()
    assert model.first.training


def test_state_dict_round_trip():
    """Test that loading a state reproduces the outputs."""
    a, b = TwoLayer(Rng(3)), TwoLayer(Rng(4))
    x = Tensor(Rng(5).normal((6, 4)))
    a.train()
    a(x)
    b.load_state_dict(a.state_dict())
    a.eval()
    b.eval()
    assert np.allclose(a(x).data, b(x).data)
    assert np.allclose(b.norm.running_mean, a.norm.running_mean)


def test_load_state_dict_rejects_mismatch():
    """Test that a missing tensor names the difference."""
    model = TwoLayer(Rng(6))
    state = model.state_dict()
    del state["second.weight"]
    with pytest.raises(ManifestMismatchError) as info:
        model.load_state_dict(state)
    assert info.value.names == ["second.weight"]


def test_to_dtype_casts_everything():
    """Test the float64 cast of parameters and buffers."""
    model = TwoLayer(Rng(7)).to_dtype(np.float64)
    assert all(p.dtype == np.float64 for p in model.parameters())
    assert model.norm.running_var.dtype == np.float64


def test_layer_norm_statistics():
    """Test zero mean and unit variance over the last axis."""
    out = LayerNorm(8)(Tensor(Rng(8).normal((5, 8)) * 3 + 1)).data
    assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-5)
    assert np.allclose(out.var(axis=-1), 1.0, atol=1e-3)


def test_batch_norm_cumulative_average():
    """Test that momentum=None averages statistics over all batches."""
    norm = BatchNorm(2, axis=-1, momentum=None)
    batches = [Rng(i).normal((10, 2)) + i for i in range(3)]
    for batch in batches:
        norm(Tensor(batch))
    expected = np.mean([b.mean(axis=0) for b in batches], axis=0)
    assert np.allclose(norm.running_mean, expected, atol=1e-5)
    norm.reset_statistics()
    assert np.all(norm.running_mean == 0) and norm.batches_tracked == 0


def test_batch_norm_eval_uses_running_statistics():
    """Test that eval mode ignores the batch."""
    norm = BatchNorm(3, axis=-1)
    norm.eval()
    x = Tensor(Rng(9).normal((4, 3)))
    assert np.allclose(norm(x).data, x.data / np.sqrt(1 + 1e-5), atol=1e-6)


def test_dropout_layer():
    """Test the probability check and eval identity."""
    with pytest.raises(ParameterError):
        Dropout(-0.1, Rng(0))
    layer = Dropout(0.5, Rng(0))
    layer.eval()
    x = Tensor(np.ones(4))
    assert layer(x) is x


def test_module_list():
    """Test registration and the container guard."""
    layers = ModuleList([Linear(2, 2, Rng(0)), Linear(2, 2, Rng(1))])
    assert len(layers) == 2
    assert [n for n, _ in layers.named_parameters()][:2] == ["0.weight", "0.bias"]
    with pytest.raises(UsageError):
        layers(Tensor(np.zeros(2)))


def test_layer_gradients():
    """Test gradients through a linear -> batch norm -> linear stack."""
    rng = Rng(10)
    model = TwoLayer(rng).to_dtype(np.float64)
    x = Tensor(rng.normal((5, 4)), requires_grad=True, dtype=np.float64)
    weights = Tensor(rng.normal((5, 2)), dtype=np.float64)
    leaves = dict(model.named_parameters(), x=x)
    errors = check_gradients(lambda: (model(x) * weights).sum(), leaves)
    assert max(errors.values()) < 1e-3
