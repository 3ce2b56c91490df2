"""
Standard layers built on the primitive operators.

Weights of linear and convolution layers are drawn from
``U(-sqrt(1/fan_in), +sqrt(1/fan_in))``; biases start at zero, normalization scales at
one and shifts at zero.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from avconf.core import ops
from avconf.core.errors import ParameterError
from avconf.core.rng import Rng
from avconf.core.tensor import DEFAULT_DTYPE, Parameter, Tensor
from avconf.nn.module import Module

IntOrTuple = Union[int, Sequence[int]]


class Linear(Module):
    """``y = x @ W + b`` with ``W`` of shape ``(d_in, d_out)``."""

    def __init__(self, d_in: int, d_out: int, rng: Rng, bias: bool = True):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        self.weight = Parameter(rng.uniform_init((d_in, d_out), fan_in=d_in))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv(Module):
    """1D, 2D or 3D convolution over ``(N, C, *spatial)`` inputs."""

    def __init__(
        self,
        dims: int,
        in_channels: int,
        out_channels: int,
        kernel: IntOrTuple,
        rng: Rng,
        stride: IntOrTuple = 1,
        padding: IntOrTuple = 0,
        groups: int = 1,
        bias: bool = True,
    ):
        """
        Initialize convolution.

        Args:
            dims: Number of spatial axes (1, 2 or 3)
            in_channels: Input channels
            out_channels: Output channels
            kernel: Kernel extent per spatial axis
            rng: Stream for weight initialization
            stride: Stride per spatial axis
            padding: Symmetric zero padding per spatial axis
            groups: Channel groups
            bias: Whether to add a per-channel bias
        """
        super().__init__()
        if dims not in (1, 2, 3):
            raise ParameterError(f"convolution dims must be 1, 2 or 3, got {dims}")
        if in_channels % groups or out_channels % groups:
            raise ParameterError(
                f"channels ({in_channels}, {out_channels}) not divisible by groups={groups}"
            )
        kernel_t: Tuple[int, ...] = (kernel,) * dims if isinstance(kernel, int) else tuple(kernel)
        self.dims = dims
        self.stride = stride
        self.padding = padding
        self.groups = groups
        fan_in = (in_channels // groups) * int(np.prod(kernel_t))
        self.weight = Parameter(
            rng.uniform_init((out_channels, in_channels // groups) + kernel_t, fan_in=fan_in)
        )
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv(
            x, self.weight, self.stride, self.padding, self.dims, self.groups, self.bias
        )


class LayerNorm(Module):
    """Normalization over the last axis with learned scale and shift."""

    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class BatchNorm(Module):
    """
    Batch normalization over a channel axis with running statistics.

    ``momentum=None`` switches the running update to a cumulative average, which is how
    statistics are re-estimated after weight averaging.
    """

    def __init__(self, channels: int, axis: int = 1, momentum: Optional[float] = 0.1):
        super().__init__()
        self.axis = axis
        self.momentum = momentum
        self.eps = 1e-5
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels, dtype=DEFAULT_DTYPE))
        self.register_buffer("running_var", np.ones(channels, dtype=DEFAULT_DTYPE))
        self.batches_tracked = 0

    def reset_statistics(self) -> None:
        self.running_mean[...] = 0.0
        self.running_var[...] = 1.0
        self.batches_tracked = 0

    def forward(self, x: Tensor) -> Tensor:
        momentum = self.momentum
        if self.training:
            self.batches_tracked += 1
            if momentum is None:
                momentum = 1.0 / self.batches_tracked
        return ops.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            self.training,
            momentum=momentum or 0.0,
            eps=self.eps,
            axis=self.axis,
        )


class Dropout(Module):
    """Inverted dropout driven by its own random stream."""

    def __init__(self, p: float, rng: Rng):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.p, self.training, self.rng)
