"""Adam with an L2 term, and the Noam learning-rate schedule."""

import math
from typing import Dict, List, Tuple

import numpy as np

from avconf.core.errors import NumericalError, ParameterError
from avconf.core.tensor import Parameter


class OptState:
    """First and second moments per parameter, plus the step counter."""

    def __init__(self):
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.step = 0

    def tensors(self) -> Dict[str, Tuple[str, np.ndarray]]:
        """Checkpoint entries (kind ``optim``)."""
        out = {f"optim.m.{name}": ("optim", m) for name, m in self.m.items()}
        out.update({f"optim.v.{name}": ("optim", v) for name, v in self.v.items()})
        return out

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], step: int) -> "OptState":
        state = cls()
        state.step = step
        for key, array in tensors.items():
            _, moment, name = key.split(".", 2)
            getattr(state, moment)[name] = np.array(array)
        return state


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: OptState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.98),
    eps: float = 1e-9,
    weight_decay: float = 1e-6,
) -> None:
    """
    One bias-corrected Adam update, in place.

    ``weight_decay * p`` is added to every gradient before the moment updates.

    Raises:
        NumericalError: a gradient contains NaN (the message names the parameter)
    """
    beta1, beta2 = betas
    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if np.isnan(g).any():
            raise NumericalError(f"NaN gradient in parameter {name!r} at step {state.step}")
        if g.shape != p.shape:
            raise ParameterError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        g = g + weight_decay * p
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m.astype(p.dtype)
        state.v[name] = v.astype(p.dtype)
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        p -= update.astype(p.dtype)


class Adam:
    """Adam over a module's named parameters."""

    def __init__(
        self,
        named_parameters: List[Tuple[str, Parameter]],
        betas: Tuple[float, float] = (0.9, 0.98),
        eps: float = 1e-9,
        weight_decay: float = 1e-6,
    ):
        self.params = dict(named_parameters)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = OptState()

    def step(self, lr: float, scale: float = 1.0) -> None:
        """Apply accumulated gradients (multiplied by ``scale``); missing gradients count as 0."""
        arrays = {name: p.data for name, p in self.params.items()}
        grads = {
            name: (p.grad * scale if p.grad is not None else np.zeros_like(p.data))
            for name, p in self.params.items()
        }
        adam_step(arrays, grads, self.state, lr, self.betas, self.eps, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def hyper_parameters(self) -> Dict:
        return {
            "betas": list(self.betas),
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "step": self.state.step,
        }


def noam_lr(step: int, warmup: int = 10000, peak: float = 1e-3) -> float:
    """Linear warmup to ``peak`` at ``step == warmup``, then inverse-square-root decay."""
    if step < 1:
        raise ParameterError(f"schedule step must be >= 1, got {step}")
    if warmup < 1:
        raise ParameterError(f"warmup must be >= 1, got {warmup}")
    return peak * min(step / warmup, math.sqrt(warmup / step))
