"""Module system and standard layers."""

from avconf.nn.layers import BatchNorm, Conv, Dropout, LayerNorm, Linear
from avconf.nn.module import Module, ModuleList

__all__ = ["BatchNorm", "Conv", "Dropout", "LayerNorm", "Linear", "Module", "ModuleList"]
