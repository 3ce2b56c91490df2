"""
Differentiable primitive operators.

Every function takes and returns ``Tensor`` objects and records its own backward
closure. Shapes follow the time-major convention used across the package: sequences
are ``(n, d)``, convolution inputs are ``(N, C, *spatial)``.
"""

import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from avconf.core.errors import DimensionError, NumericalError, ParameterError
from avconf.core.tensor import Tensor, check_broadcast, unbroadcast

IntOrTuple = Union[int, Sequence[int]]


def _tuple(value: IntOrTuple, n: int, what: str) -> Tuple[int, ...]:
    if isinstance(value, int):
        return (value,) * n
    value = tuple(int(v) for v in value)
    if len(value) != n:
        raise ParameterError(f"{what} needs {n} entries, got {value}")
    return value


# ---------------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Batched matrix product ``a[..., m, p] @ b[..., p, q]``.

    Raises:
        DimensionError: inner extents differ or batch extents do not broadcast
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    check_broadcast(a.shape[:-2], b.shape[:-2], f"matmul {a.shape} @ {b.shape}")
    x, y = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(y, -1, -2)
        gb = np.swapaxes(x, -1, -2) @ g
        return unbroadcast(ga, x.shape), unbroadcast(gb, y.shape)

    return Tensor._make(x @ y, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` laid out ``(d_in, d_out)``."""
    out = matmul(x, weight)
    return out + bias if bias is not None else out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``."""
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat"
    )


def gather(x: Tensor, index: np.ndarray) -> Tensor:
    """
    Gather along the last axis: ``out[..., j] = x[..., index[..., j]]``.

    ``index`` broadcasts against the leading extents of ``x``.
    """
    index = np.broadcast_to(np.asarray(index), x.shape[:-1] + np.shape(index)[-1:])
    lead = x.shape[:-1]
    rows = int(np.prod(lead)) if lead else 1
    flat_x = x.data.reshape(rows, x.shape[-1])
    flat_idx = index.reshape(rows, -1)
    row_ids = np.arange(rows)[:, None]
    out = flat_x[row_ids, flat_idx].reshape(index.shape)
    shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros((rows, shape[-1]), dtype=dtype)
        np.add.at(full, (np.broadcast_to(row_ids, flat_idx.shape), flat_idx), g.reshape(rows, -1))
        return (full.reshape(shape),)

    return Tensor._make(out, (x,), backward, "gather")


# ---------------------------------------------------------------------- activations


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def swish(x: Tensor) -> Tensor:
    """``x * sigmoid(x)``."""
    a = x.data
    s = expit(a)
    return Tensor._make(a * s, (x,), lambda g: (g * s * (1.0 + a * (1.0 - s)),), "swish")


def relu(x: Tensor) -> Tensor:
    a = x.data
    return Tensor._make(np.maximum(a, 0), (x,), lambda g: (g * (a > 0),), "relu")


def glu(x: Tensor, axis: int = -1) -> Tensor:
    """Gated linear unit: first half times sigmoid of the second half."""
    half = x.shape[axis] // 2
    index_a = [slice(None)] * x.ndim
    index_b = [slice(None)] * x.ndim
    index_a[axis] = slice(0, half)
    index_b[axis] = slice(half, None)
    return x[tuple(index_a)] * sigmoid(x[tuple(index_b)])


def _check_finite_rows(x: np.ndarray, axis: int) -> np.ndarray:
    if np.isnan(x).any():
        raise NumericalError("softmax input contains NaN")
    peak = np.max(x, axis=axis, keepdims=True)
    if np.isneginf(peak).any():
        raise NumericalError("softmax over a row that is entirely -inf")
    return peak


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """
    Numerically stable softmax (max-subtraction).

    Raises:
        NumericalError: NaN input or a row that is entirely -inf
    """
    peak = _check_finite_rows(x.data, axis)
    e = np.exp(x.data - peak)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Log of ``softmax`` computed without forming small probabilities."""
    peak = _check_finite_rows(x.data, axis)
    shifted = x.data - peak
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), backward, "log_softmax")


def dropout(x: Tensor, p: float, training: bool, rng=None) -> Tensor:
    """
    Inverted dropout: scale kept units by ``1/(1-p)`` in training, identity in eval.

    Raises:
        ParameterError: ``p`` outside ``[0, 1)``
    """
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * Tensor(keep)


# ---------------------------------------------------------------------- normalization


def layer_norm(
    x: Tensor, gamma: Optional[Tensor] = None, beta: Optional[Tensor] = None, eps: float = 1e-5
) -> Tensor:
    """Normalize over the last axis, then apply the optional affine transform."""
    a = x.data
    mu = a.mean(axis=-1, keepdims=True)
    var = a.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a - mu) * inv

    def backward(g):
        gx = g * gamma.data if gamma is not None else g
        gx = inv * (
            gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(a.ndim - 1))
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=lead))
        if beta is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data
    parents = [x] + [t for t in (gamma, beta) if t is not None]
    return Tensor._make(out.astype(a.dtype, copy=False), parents, backward, "layer_norm")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    axis: int = 1,
) -> Tensor:
    """
    Batch normalization over every axis except ``axis``.

    In training mode batch statistics are used and the running statistics are updated
    in place with ``momentum`` (unbiased variance, as the running estimate).
    """
    a = x.data
    axis = axis % a.ndim
    reduce_axes = tuple(i for i in range(a.ndim) if i != axis)
    bshape = [1] * a.ndim
    bshape[axis] = a.shape[axis]
    count = a.size // a.shape[axis]

    if training:
        mu = a.mean(axis=reduce_axes)
        var = a.var(axis=reduce_axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbiased = var * count / max(count - 1, 1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean, running_var

    inv = (1.0 / np.sqrt(var + eps)).reshape(bshape)
    xhat = (a - mu.reshape(bshape)) * inv
    out = (xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)).astype(a.dtype)

    def backward(g):
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = inv * (
                gxhat
                - gxhat.mean(axis=reduce_axes, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=reduce_axes, keepdims=True)
            )
        else:
            gx = gxhat * inv
        return gx, (g * xhat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return Tensor._make(out, (x, gamma, beta), backward, "batch_norm")


# ---------------------------------------------------------------------- convolution


def conv(
    x: Tensor,
    w: Tensor,
    stride: IntOrTuple = 1,
    padding: IntOrTuple = 0,
    dims: Optional[int] = None,
    groups: int = 1,
    bias: Optional[Tensor] = None,
) -> Tensor:
    """
    N-dimensional cross-correlation (1D, 2D or 3D) through an im2col product.

    Args:
        x: Input ``(N, C_in, *spatial)``
        w: Kernel ``(C_out, C_in / groups, *kernel)``
        stride: Stride per spatial axis
        padding: Symmetric zero padding per spatial axis
        dims: Expected number of spatial axes (checked against ``w``)
        groups: Channel groups (``groups == C_in`` gives a depthwise convolution)
        bias: Optional ``(C_out,)`` bias

    Returns:
        ``(N, C_out, *out)`` with ``out = floor((in + 2*pad - kernel) / stride) + 1``

    Raises:
        DimensionError: rank/channel mismatch or kernel larger than the padded input
    """
    nd = w.ndim - 2
    if dims is not None and dims != nd:
        raise DimensionError(f"conv{dims}d given a rank-{w.ndim} kernel {w.shape}")
    if x.ndim != nd + 2:
        raise DimensionError(f"conv{nd}d needs input of rank {nd + 2}, got {x.shape}")
    stride = _tuple(stride, nd, "stride")
    padding = _tuple(padding, nd, "padding")
    n, c_in = x.shape[:2]
    c_out, c_group = w.shape[:2]
    kernel = w.shape[2:]
    if c_in != c_group * groups or c_out % groups:
        raise DimensionError(
            f"conv channels mismatch: input {x.shape}, kernel {w.shape}, groups={groups}"
        )
    padded = tuple(s + 2 * p for s, p in zip(x.shape[2:], padding))
    if any(k > s for k, s in zip(kernel, padded)):
        raise DimensionError(f"kernel {kernel} larger than padded input {padded}")

    xp = np.pad(x.data, [(0, 0), (0, 0)] + [(p, p) for p in padding])
    windows = sliding_window_view(xp, kernel, axis=tuple(range(2, 2 + nd)))
    windows = windows[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
    out_shape = windows.shape[2 : 2 + nd]
    positions = int(np.prod(out_shape))
    taps = int(np.prod(kernel))
    cols = windows.reshape(n, groups, c_group, positions, taps)
    wg = w.data.reshape(groups, c_out // groups, c_group, taps)
    out = np.einsum("ngcpk,gock->ngop", cols, wg, optimize=True).reshape(n, c_out, *out_shape)
    if bias is not None:
        out = out + bias.data.reshape((1, c_out) + (1,) * nd)

    def backward(g):
        gg = g.reshape(n, groups, c_out // groups, positions)
        gw = np.einsum("ngop,ngcpk->gock", gg, cols, optimize=True).reshape(w.shape)
        gcols = np.einsum("ngop,gock->ngcpk", gg, wg, optimize=True)
        gcols = gcols.reshape((n, c_in) + tuple(out_shape) + tuple(kernel))
        gxp = np.zeros(xp.shape, dtype=xp.dtype)
        for tap in np.ndindex(*kernel):
            window = tuple(
                slice(k, k + s * (o - 1) + 1, s) for k, s, o in zip(tap, stride, out_shape)
            )
            gxp[(slice(None), slice(None)) + window] += gcols[(Ellipsis,) + tap]
        crop = tuple(slice(p, p + s) for p, s in zip(padding, x.shape[2:]))
        grads = [gxp[(slice(None), slice(None)) + crop], gw]
        if bias is not None:
            grads.append(g.sum(axis=(0,) + tuple(range(2, 2 + nd))))
        return tuple(grads)

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor._make(out.astype(x.dtype, copy=False), parents, backward, f"conv{nd}d")


def max_pool(
    x: Tensor, kernel: IntOrTuple, stride: IntOrTuple, padding: IntOrTuple = 0
) -> Tensor:
    """Max pooling over the spatial axes of ``(N, C, *spatial)`` (padding is -inf)."""
    nd = x.ndim - 2
    kernel = _tuple(kernel, nd, "kernel")
    stride = _tuple(stride, nd, "stride")
    padding = _tuple(padding, nd, "padding")
    xp = np.pad(
        x.data, [(0, 0), (0, 0)] + [(p, p) for p in padding], constant_values=-np.inf
    )
    windows = sliding_window_view(xp, kernel, axis=tuple(range(2, 2 + nd)))
    windows = windows[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
    out_shape = windows.shape[: 2 + nd]
    flat = windows.reshape(out_shape + (-1,))
    winner = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, winner[..., None], axis=-1)[..., 0]

    def backward(g):
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for flat_tap, tap in enumerate(np.ndindex(*kernel)):
            window = tuple(
                slice(k, k + s * (o - 1) + 1, s)
                for k, s, o in zip(tap, stride, out_shape[2:])
            )
            gxp[(slice(None), slice(None)) + window] += g * (winner == flat_tap)
        crop = tuple(slice(p, p + s) for p, s in zip(padding, x.shape[2:]))
        return (gxp[(slice(None), slice(None)) + crop],)

    return Tensor._make(out, (x,), backward, "max_pool")


# ---------------------------------------------------------------------- temporal resampling


def avg_pool1d(x: Tensor, k: int) -> Tensor:
    """
    Average non-overlapping windows of ``k`` steps of a ``(n, d)`` sequence.

    The last, partial window is averaged over its actual length, so the output has
    ``ceil(n / k)`` steps.

    Raises:
        ParameterError: ``k < 1``
    """
    if k < 1:
        raise ParameterError(f"pool size must be >= 1, got {k}")
    if k == 1:
        return x
    n, d = x.shape
    m = math.ceil(n / k)
    counts = np.full((m, 1), k, dtype=x.dtype)
    counts[-1, 0] = n - (m - 1) * k
    padded = np.zeros((m * k, d), dtype=x.dtype)
    padded[:n] = x.data
    out = padded.reshape(m, k, d).sum(axis=1) / counts

    def backward(g):
        return (np.repeat(g / counts, k, axis=0)[:n],)

    return Tensor._make(out, (x,), backward, "avg_pool1d")


def upsample_nearest1d(x: Tensor, k: int, target_len: int) -> Tensor:
    """
    Repeat every step of a ``(m, d)`` sequence ``k`` times and truncate to ``target_len``.

    Raises:
        ParameterError: ``k < 1`` or ``target_len`` outside ``[(m-1)k+1, mk]``
    """
    if k < 1:
        raise ParameterError(f"upsample factor must be >= 1, got {k}")
    m, d = x.shape
    if not (m - 1) * k + 1 <= target_len <= m * k:
        raise ParameterError(
            f"target length {target_len} outside [{(m - 1) * k + 1}, {m * k}] for m={m}, k={k}"
        )
    if k == 1:
        return x

    def backward(g):
        padded = np.zeros((m * k, d), dtype=g.dtype)
        padded[:target_len] = g
        return (padded.reshape(m, k, d).sum(axis=1),)

    out = np.repeat(x.data, k, axis=0)[:target_len]
    return Tensor._make(out, (x,), backward, "upsample_nearest1d")


def pad_rows(x: Tensor, total: int) -> Tensor:
    """Zero-pad a ``(n, d)`` sequence at the end to ``total`` rows."""
    n = x.shape[0]
    if total == n:
        return x
    zeros = Tensor(np.zeros((total - n,) + x.shape[1:], dtype=x.dtype))
    return concat([x, zeros], axis=0)


def stack_mean(tensors: List[Tensor]) -> Tensor:
    """Elementwise mean of equally shaped tensors."""
    total = tensors[0]
    for t in tensors[1:]:
        total = total + t
    return total * (1.0 / len(tensors))
