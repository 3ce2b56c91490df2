"""
Base class for trainable components.

A ``Module`` owns named ``Parameter`` leaves, named non-trainable buffers (batch-norm
running statistics) and child modules. Attribute assignment registers them, so dotted
names such as ``audio.stages.0.blocks.1.mhsa.query.weight`` fall out of the attribute
structure.
"""

from abc import ABC, abstractmethod
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from avconf.core.errors import UsageError
from avconf.core.serialization import compare_manifests
from avconf.core.tensor import Parameter


class Module(ABC):
    """Base class for model components."""

    def __init__(self):
        """Initialize empty registries."""
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_buffers", [])
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name: str, value) -> None:
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray) -> None:
        """Register a non-trainable array that is saved with the parameters."""
        if name not in self._buffers:
            self._buffers.append(name)
        object.__setattr__(self, name, array)

    @abstractmethod
    def forward(self, *args, **kwargs):
        """Compute the module output."""
        pass

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # ------------------------------------------------------------------ traversal

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self) -> Iterator[Tuple[str, Parameter]]:
        for path, module in self.named_modules():
            for name, param in module._parameters.items():
                yield (f"{path}.{name}" if path else name), param

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for path, module in self.named_modules():
            for name in module._buffers:
                yield (f"{path}.{name}" if path else name), getattr(module, name)

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    # ------------------------------------------------------------------ state

    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def to_dtype(self, dtype) -> "Module":
        """Cast every parameter and buffer in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for _, module in self.named_modules():
            for name in module._buffers:
                object.__setattr__(module, name, getattr(module, name).astype(dtype))
        return self

    def state_dict(self) -> Dict[str, Tuple[str, np.ndarray]]:
        """Name -> (kind, copy of the array); kinds are ``param`` and ``buffer``."""
        state = {name: ("param", p.data.copy()) for name, p in self.named_parameters()}
        state.update({name: ("buffer", b.copy()) for name, b in self.named_buffers()})
        return state

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: tuple(array.shape) for name, (_, array) in self.state_dict().items()}

    def load_state_dict(self, state: Dict[str, Tuple[str, np.ndarray]]) -> None:
        """
        Copy values in, keeping each target's dtype.

        Raises:
            ManifestMismatchError: names or shapes differ from this module's
        """
        compare_manifests(
            self.shapes(), {n: tuple(a.shape) for n, (k, a) in state.items() if k != "optim"}
        )
        params = dict(self.named_parameters())
        for name, (kind, array) in state.items():
            if kind == "param":
                params[name].data = np.array(array, dtype=params[name].dtype)
        for path, module in self.named_modules():
            for buf in module._buffers:
                full = f"{path}.{buf}" if path else buf
                current = getattr(module, buf)
                object.__setattr__(module, buf, np.array(state[full][1], dtype=current.dtype))

    def reset_running_stats(self) -> None:
        for _, module in self.named_modules():
            if hasattr(module, "reset_statistics"):
                module.reset_statistics()


class ModuleList(Module):
    """Ordered container registering children under ``0``, ``1``, ..."""

    def __init__(self, modules: Optional[List[Module]] = None):
        super().__init__()
        self._items: List[Module] = []
        for module in modules or []:
            self.append(module)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, index: int) -> Module:
        return self._items[index]

    def forward(self, *args, **kwargs):
        raise UsageError("ModuleList is a container and has no forward()")
