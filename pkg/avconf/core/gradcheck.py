"""
Finite-difference gradient oracle.

The oracle re-evaluates a scalar function in float64 with central differences and
compares the result against ``Tensor.backward``.
"""

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from avconf.core.errors import ParameterError
from avconf.core.tensor import Tensor, no_grad

DEFAULT_STEP = 1e-3
DEFAULT_TOLERANCE = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max|a - n| / max(max|a|, max|n|, 1e-12)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def finite_diff_grad(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = DEFAULT_STEP,
    indices: Optional[Sequence[int]] = None,
) -> Tensor:
    """
    Central-difference gradient of a scalar function, computed in float64.

    Args:
        f: Deterministic function from a tensor to a scalar tensor
        x: Evaluation point
        h: Step size
        indices: Optional flat element indices to picked (others are left at zero)

    Returns:
        Float64 tensor shaped like ``x``
    """
    if h <= 0:
        raise ParameterError(f"finite-difference step must be positive, got {h}")
    base = x.data.astype(np.float64)
    grad = np.zeros(base.size, dtype=np.float64)
    picked = range(base.size) if indices is None else indices
    with no_grad():
        for i in picked:
            shifted = base.reshape(-1).copy()
            shifted[i] += h
            upper = f(Tensor(shifted.reshape(base.shape), dtype=np.float64)).item()
            shifted[i] -= 2 * h
            lower = f(Tensor(shifted.reshape(base.shape), dtype=np.float64)).item()
            grad[i] = (upper - lower) / (2 * h)
    return Tensor(grad.reshape(base.shape), dtype=np.float64)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    leaves: Dict[str, Tensor],
    h: float = DEFAULT_STEP,
    max_elements: Optional[int] = None,
    rng=None,
) -> Dict[str, float]:
    """
    Compare backward() against central differences for every named leaf.

    The leaves are perturbed in place and ``loss_fn`` is re-evaluated, so the closure must
    read them directly. Leaves should already be float64 (see ``Module.to_dtype``).

    Args:
        loss_fn: Zero-argument closure returning a scalar tensor
        leaves: Name -> leaf tensor with ``requires_grad``
        h: Step size
        max_elements: Check at most this many elements per leaf (sampled with ``rng``)
        rng: ``Rng`` used to sample elements when ``max_elements`` is set

    Returns:
        Name -> relative error over the checked elements
    """
    for leaf in leaves.values():
        leaf.zero_grad()
    loss_fn().backward()
    analytic = {
        name: (leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)).reshape(-1)
        for name, leaf in leaves.items()
    }

    errors: Dict[str, float] = {}
    with no_grad():
        for name, leaf in leaves.items():
            flat = leaf.data.reshape(-1)
            if max_elements is not None and flat.size > max_elements:
                picked = np.sort(rng.permutation(flat.size)[:max_elements])
            else:
                picked = np.arange(flat.size)
            numeric = np.empty(len(picked), dtype=np.float64)
            for j, i in enumerate(picked):
                original = flat[i]
                flat[i] = original + h
                upper = loss_fn().item()
                flat[i] = original - h
                lower = loss_fn().item()
                flat[i] = original
                numeric[j] = (upper - lower) / (2 * h)
            errors[name] = relative_error(analytic[name][picked], numeric)
    return errors
