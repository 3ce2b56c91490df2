"""
Multi-head self-attention with relative sinusoidal positions.

Three variants share one parameter set (query/key/value/output projections plus a
bias-free positional projection shared across heads):

- regular: scaled dot-product attention over all ``n`` frames
- grouped(g): after the projections, ``g`` neighbouring frames are concatenated along
  the feature axis, attention runs over ``ceil(n/g)`` groups with head width ``g*d_h``,
  and the result is split back into frames
- patch(k): the input is average-pooled by ``k``, attended at length ``ceil(n/k)`` and
  nearest-neighbour upsampled back to ``n``

Relative scores are ``S_rel[h, i, j] = Q[h, i] . E[h, j - i]`` where ``E`` is the
positional projection of sinusoidal encodings of the offsets.
"""

import math
from typing import Optional

import numpy as np

from avconf.backend.config import AttentionConfig
from avconf.core import ops
from avconf.core.errors import ConfigError, DimensionError, InputError
from avconf.core.rng import Rng
from avconf.core.tensor import Tensor
from avconf.nn.layers import Linear
from avconf.nn.module import Module


def sinusoidal_encoding(offsets: np.ndarray, d: int, dtype=np.float32) -> np.ndarray:
    """Standard sin/cos encodings of (possibly negative) positions, shape ``(len, d)``."""
    offsets = np.asarray(offsets, dtype=np.float64)[:, None]
    rates = 1.0 / (10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d))
    table = np.zeros((offsets.shape[0], d))
    table[:, 0::2] = np.sin(offsets * rates)
    table[:, 1::2] = np.cos(offsets * rates[: d // 2])
    return table.astype(dtype)


def relative_index(n: int, center: int) -> np.ndarray:
    """``index[i, j] = (j - i) + center``."""
    steps = np.arange(n)
    return steps[None, :] - steps[:, None] + center


def rel_scores(q: Tensor, table: Tensor) -> Tensor:
    """
    Relative position scores by direct gather over offsets.

    Args:
        q: Queries ``(H, n, d_h)``
        table: Projected encodings ``(2m - 1, H * d_h)`` for offsets ``-(m-1) .. m-1``
            with ``m >= n``

    Returns:
        ``(H, n, n)`` with ``out[h, i, j] = q[h, i] . table[h, (j - i) + m - 1]``
    """
    heads, n, head_dim = q.shape
    rows = table.shape[0]
    if rows % 2 == 0 or (rows + 1) // 2 < n:
        raise DimensionError(f"relative table with {rows} rows cannot cover length {n}")
    if table.shape[1] != heads * head_dim:
        raise DimensionError(f"relative table width {table.shape[1]} != {heads} x {head_dim}")
    per_head = table.reshape(rows, heads, head_dim).transpose(1, 2, 0)
    scores = ops.matmul(q, per_head)
    return ops.gather(scores, relative_index(n, (rows - 1) // 2))


class MultiHeadSelfAttention(Module):
    """Self-attention in one of the regular, grouped or patch variants."""

    def __init__(self, config: AttentionConfig, rng: Rng):
        """
        Initialize attention.

        Args:
            config: Width, heads, variant, group/patch size and relative-position range
            rng: Stream for weight initialization
        """
        super().__init__()
        self.config = config
        d = config.d_model
        self.heads = config.heads
        self.head_dim = config.head_dim
        self.query = Linear(d, d, rng.spawn("query"))
        self.key = Linear(d, d, rng.spawn("key"))
        self.value = Linear(d, d, rng.spawn("value"))
        self.out = Linear(d, d, rng.spawn("out"))
        if config.relative_pos:
            self.pos_proj = Linear(d, d, rng.spawn("pos"), bias=False)
        self.last_weights: Optional[np.ndarray] = None

    # ------------------------------------------------------------------ pieces

    def positional_table(self, groups: int, group_size: int, dtype) -> Tensor:
        """Projected encodings for group offsets ``-(groups-1) .. groups-1``."""
        offsets = np.arange(-(groups - 1), groups)
        frame_offsets = offsets[:, None] * group_size + np.arange(group_size)[None, :]
        frame_offsets = frame_offsets.reshape(-1)
        encodings = Tensor(sinusoidal_encoding(frame_offsets, self.config.d_model, dtype))
        table = self.pos_proj(encodings)
        rows = offsets.size
        table = table.reshape(rows, group_size, self.heads, self.head_dim).transpose(0, 2, 1, 3)
        return table.reshape(rows, self.heads * group_size * self.head_dim)

    def _attend(
        self, q: Tensor, k: Tensor, v: Tensor, s_rel: Optional[Tensor], mask: Optional[np.ndarray]
    ) -> Tensor:
        scale = 1.0 / math.sqrt(q.shape[-1])
        scores = ops.matmul(q, k.swapaxes(-1, -2))
        if s_rel is not None:
            scores = scores + s_rel
        scores = scores * scale
        if mask is not None:
            if not np.any(mask):
                raise InputError("every attention position is masked")
            penalty = np.where(mask, 0.0, -np.inf).astype(scores.dtype)
            scores = scores + Tensor(penalty[None, None, :])
        weights = ops.softmax(scores, axis=-1)
        self.last_weights = weights.data
        return ops.matmul(weights, v)

    def _grouped(self, x: Tensor, g: int, mask: Optional[np.ndarray]) -> Tensor:
        n, d = x.shape
        if n >= self.config.n_max:
            raise ConfigError(f"sequence length {n} needs n_max > {n}, got {self.config.n_max}")
        m = math.ceil(n / g)
        H, dh = self.heads, self.head_dim

        def split(t: Tensor) -> Tensor:
            t = ops.pad_rows(t, m * g)
            return t.reshape(m, g, H, dh).transpose(2, 0, 1, 3).reshape(H, m, g * dh)

        q = split(self.query(x))
        k = split(self.key(x))
        v = split(self.value(x))
        s_rel = None
        if self.config.relative_pos:
            s_rel = rel_scores(q, self.positional_table(m, g, x.dtype))
        group_mask = None
        if mask is not None:
            padded = np.zeros(m * g, dtype=bool)
            padded[:n] = mask
            group_mask = padded.reshape(m, g).any(axis=1)
        o = self._attend(q, k, v, s_rel, group_mask)
        o = o.reshape(H, m, g, dh).transpose(1, 2, 0, 3).reshape(m * g, d)
        if m * g != n:
            o = o[:n]
        return self.out(o)

    # ------------------------------------------------------------------ variants

    def mhsa(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        """Regular attention over all frames."""
        return self._grouped(x, 1, mask)

    def mhsa_grouped(self, x: Tensor, g: int, mask: Optional[np.ndarray] = None) -> Tensor:
        """Attention over groups of ``g`` frames concatenated along features."""
        return self._grouped(x, g, mask)

    def mhsa_patch(self, x: Tensor, k: int, mask: Optional[np.ndarray] = None) -> Tensor:
        """Pool by ``k``, attend, upsample back; frames of one patch share an output."""
        n = x.shape[0]
        pooled_mask = None
        if mask is not None:
            m = math.ceil(n / k)
            padded = np.zeros(m * k, dtype=bool)
            padded[:n] = mask
            pooled_mask = padded.reshape(m, k).any(axis=1)
        pooled = ops.avg_pool1d(x, k)
        return ops.upsample_nearest1d(self.mhsa(pooled, pooled_mask), k, n)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        variant = self.config.variant
        if variant == "grouped":
            return self.mhsa_grouped(x, self.config.group_size, mask)
        if variant == "patch":
            return self.mhsa_patch(x, self.config.patch_size, mask)
        return self.mhsa(x, mask)

