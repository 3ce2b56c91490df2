"""
Closed-form attention cost.

Counts are multiply-adds (one multiply-add = 1 FLOP) for the query, key, value and
output projections plus the two attention products. Softmax, biases and normalization
are not counted. The relative-position term is optional: the projection of the
``2m-1`` offset encodings plus the product ``Q E^T``.
"""

import math

from avconf.backend.config import AttentionConfig
from avconf.core.errors import ParameterError

FLOP_CONVENTION_VERSION = 1
FLOP_CONVENTION = (
    f"flops-v{FLOP_CONVENTION_VERSION}: 1 multiply-add = 1 FLOP; "
    "softmax, bias, normalization, pooling and activations excluded; "
    "STFT and mel features excluded; n/k and n/g rounded up; "
    "relative-position term = encoding-table projection + Q E^T"
)


def attention_flops(config: AttentionConfig, n: int, include_rel_pos: bool = False) -> int:
    """
    Multiply-add count of one attention layer on a length-``n`` sequence.

    regular: ``4*n*d^2 + 2*n^2*d``
    grouped: ``4*n*d^2 + 2*(n/g)^2*(d*g)``
    patch: ``4*(n/k)*d^2 + 2*(n/k)^2*d``

    With ``include_rel_pos`` and ``m`` the attended length (``n``, ``n/g`` or ``n/k``),
    add ``(2m-1)*g*d^2`` for projecting the offset table (``g = 1`` unless grouped) and
    ``m*(2m-1)*w`` for ``Q E^T`` with ``w`` the attended width.
    """
    if n < 1:
        raise ParameterError(f"sequence length must be >= 1, got {n}")
    d = config.d_model
    g = 1
    if config.variant == "grouped":
        g = config.group_size
        m = math.ceil(n / g)
        width = d * g
        total = 4 * n * d * d + 2 * m * m * width
    elif config.variant == "patch":
        m = math.ceil(n / config.patch_size)
        width = d
        total = 4 * m * d * d + 2 * m * m * d
    else:
        m, width = n, d
        total = 4 * n * d * d + 2 * n * n * d
    if include_rel_pos:
        total += (2 * m - 1) * g * d * d + m * (2 * m - 1) * width
    return total
