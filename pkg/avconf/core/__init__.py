"""Tensor engine, primitive operators, random streams and serialization."""

from avconf.core.rng import Rng
from avconf.core.tensor import Parameter, Tensor, backward, no_grad, tensor

__all__ = ["Parameter", "Rng", "Tensor", "backward", "no_grad", "tensor"]
